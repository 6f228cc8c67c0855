import json

import numpy as np
import pytest

from dualfuse.checkpoint import load_checkpoint, save_checkpoint
from dualfuse.engine import Rng, Tensor
from dualfuse.errors import BadMagicError, ShapeMismatchWithManifestError, TruncatedFileError
from dualfuse.fusion import Dims
from dualfuse.models import MODEL_KINDS, build_model

DIMS = Dims(l_i=10, d_i=12, l_t=10, d_t=12)


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_round_trip_is_bitwise(tmp_path, kind):
    model = build_model(kind, DIMS, 3, "tcatt", seed=5)
    for p in model.parameters():  # move off the init values
        p.data = p.data + np.float32(0.125)
    save_checkpoint(model, tmp_path)
    back = load_checkpoint(tmp_path)
    assert type(back) is type(model) and back.config() == model.config()
    a, b = model.state_dict(), back.state_dict()
    assert list(a) == list(b) and all(a[k].tobytes() == b[k].tobytes() for k in a)
    rng = Rng(0)
    t, i = Tensor(rng.normal((2, 10, 12))), Tensor(rng.normal((2, 10, 12)))
    assert np.array_equal(model(t, i).data, back(t, i).data)


def test_blob_layout(tmp_path):
    model = build_model("fusion", DIMS, 2, "nocatt", hidden=4)
    save_checkpoint(model, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    names = [e["name"] for e in manifest["parameters"]]
    assert names == [n for n, _ in model.named_parameters()]
    blob = np.frombuffer((tmp_path / "params.bin").read_bytes(), "<f4")
    assert blob.size == model.num_parameters()
    first = model.parameters()[0]
    assert np.array_equal(blob[:first.size], first.data.ravel())


@pytest.fixture
def saved(tmp_path):
    save_checkpoint(build_model("fusion", DIMS, 2, hidden=4), tmp_path)
    return tmp_path


def test_truncated_blob(saved):
    path = saved / "params.bin"
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(TruncatedFileError):
        load_checkpoint(saved)


def test_padded_blob(saved):
    path = saved / "params.bin"
    path.write_bytes(path.read_bytes() + b"\0" * 4)
    with pytest.raises(ShapeMismatchWithManifestError):
        load_checkpoint(saved)


def test_layout_disagreeing_with_config(saved):
    path = saved / "manifest.json"
    m = json.loads(path.read_text())
    m["parameters"][0]["shape"] = [1, 1]
    path.write_text(json.dumps(m))
    with pytest.raises(ShapeMismatchWithManifestError):
        load_checkpoint(saved)


def test_wrong_version(saved):
    path = saved / "manifest.json"
    m = json.loads(path.read_text())
    m["version"] = 99
    path.write_text(json.dumps(m))
    with pytest.raises(BadMagicError):
        load_checkpoint(saved)
