# Sphinx configuration of the Spatial Memory Bench API documentation.

import os
import sys

sys.path.insert(0, os.path.abspath('../../.'))

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
]

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'Spatial Memory Bench'
copyright = '2026, Spatial Memory Bench developers'
author = 'Spatial Memory Bench developers'
version = '0.1.0'
release = '0.1.0'
language = 'en'

exclude_patterns = []
pygments_style = 'sphinx'

autodoc_member_order = 'bysource'

html_theme = 'nature'
html_static_path = []
htmlhelp_basename = 'SpatialMemoryBenchdoc'

latex_documents = [
    (master_doc, 'SpatialMemoryBench.tex', 'Spatial Memory Bench Documentation', author, 'manual'),
]

man_pages = [
    (master_doc, 'spatialmemorybench', 'Spatial Memory Bench Documentation', [author], 1)
]
