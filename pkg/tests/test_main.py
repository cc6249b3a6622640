import pytest

from log import load_log
from main import LOG_NAME, SNAPSHOT_NAME, main
from memory_store import load_snapshot
from stream import CAMERA, MANIFEST, read_camera, read_manifest

CONFIG = """
terrain_extent = 128
image_width = 48
image_height = 28
working_downsample = 1
trajectory_length = 12
trajectory_loops = 1
bench_frames = 40
bench_bucket = 20
bench_warmup = 2
bench_loops = 1
log_level = WARNING
"""


def _output(capsys):
    return dict(line.split(" ", 1) for line in capsys.readouterr().out.splitlines())


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(CONFIG)
    return str(path)


@pytest.fixture
def stream(tmp_path, config, capsys):
    folder = tmp_path / "stream"
    assert main(["simulate", "--config", config, "--out", str(folder)]) == 0
    capsys.readouterr()
    return folder


def test_simulate(tmp_path, config, capsys):
    folder = tmp_path / "stream"
    assert main(["simulate", "--config", config, "--out", str(folder)]) == 0
    assert _output(capsys) == {"frames": "12", "stream": str(folder)}
    assert len(list(folder.glob("*.depth"))) == 12
    assert len(read_manifest(folder)[1]) == 12


def test_simulate_is_deterministic(tmp_path, config, capsys):
    for run in ("a", "b"):
        assert main(["simulate", "--config", config, "--out", str(tmp_path / run)]) == 0
    for path in (tmp_path / "a").iterdir():
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()
    assert main(["simulate", "--config", config, "--seed", "9", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / MANIFEST).read_text() != (tmp_path / "a" / MANIFEST).read_text()


def test_ingest_retrieve_and_info(tmp_path, config, stream, capsys):
    out = tmp_path / "memory"
    assert main(["ingest", str(stream), "--config", config, "--out", str(out)]) == 0
    printed = _output(capsys)
    assert printed["frames"] == "12"
    entries = load_log(out / LOG_NAME)
    assert len(entries) == 12
    assert sum(entry.is_keyframe for entry in entries) == int(printed["keyframes"])

    geo, frames = load_snapshot(out / SNAPSHOT_NAME)
    assert len(geo) == int(printed["points"])
    first = frames[0].pose
    pose = [str(value) for value in first.as_tuple()]
    assert main(["retrieve", str(out / SNAPSHOT_NAME), "--config", config, "--pose"] + pose) == 0
    retrieved = _output(capsys)
    ids = [int(i) for i in retrieved["ids"].split()]
    assert 0 < len(ids) <= 8
    assert set(ids) <= {record.frame_id for record in frames if record.is_keyframe}
    assert float(retrieved["time_us"]) >= 0

    assert main(["retrieve", str(out / SNAPSHOT_NAME), "--config", config, "--k", "1", "--frustum-only",
                 "--pose"] + pose) == 0
    assert len(_output(capsys)["ids"].split()) == 1

    assert main(["snapshot-info", str(out / SNAPSHOT_NAME), "--config", config]) == 0
    info = _output(capsys)
    assert (info["frames"], info["keyframes"], info["points"]) == ("12", printed["keyframes"], printed["points"])


def test_retrieve_uses_the_ingest_camera(tmp_path, config, stream, capsys):
    out = tmp_path / "memory"
    assert main(["ingest", str(stream), "--config", config, "--out", str(out)]) == 0
    assert _output(capsys)["camera"] == str(out / CAMERA)
    assert read_camera(out / CAMERA) == read_manifest(stream)[0]
    pose = [str(value) for value in load_snapshot(out / SNAPSHOT_NAME)[1][0].pose.as_tuple()]
    other = tmp_path / "other.cfg"
    other.write_text(CONFIG.replace("image_width = 48", "image_width = 96").replace("image_height = 28",
                                                                                 "image_height = 56"))
    answers = []
    for cfg in (config, str(other)):
        assert main(["retrieve", str(out / SNAPSHOT_NAME), "--config", cfg, "--pose"] + pose) == 0
        answers.append(_output(capsys)["ids"])
    assert answers[0] == answers[1] and answers[0]
    (out / CAMERA).unlink()
    assert main(["retrieve", str(out / SNAPSHOT_NAME), "--config", config, "--pose"] + pose) == 0
    assert _output(capsys)["ids"] == answers[0]


def test_tampered_stream_fails(tmp_path, config, stream, capsys):
    (stream / "000003.depth").unlink()
    assert main(["ingest", str(stream), "--config", config, "--out", str(tmp_path / "memory")]) == 1
    assert "error" in capsys.readouterr().err


def test_corrupt_snapshot_fails(tmp_path, config, capsys):
    path = tmp_path / "bad.gmem"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    assert main(["snapshot-info", str(path), "--config", config]) == 1
    assert "magic" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("voxel_size = -1\n")
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert "voxel_size" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_bench(tmp_path, config, capsys):
    out = tmp_path / "bench"
    assert main(["bench", "--config", config, "--out", str(out)]) == 0
    assert len((out / "bench.csv").read_text().splitlines()) == 5
    for name in ("bench.json", "summary.txt", "bench.png"):
        assert (out / name).exists()
