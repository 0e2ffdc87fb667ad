"""Smoke test for the pybidirlm extension module.

Build and run from the repository root:

    cargo build --release -p pybidirlm --features extension-module
    python3 python/smoke_test.py

The script looks for the compiled library under target/release (or the
path in PYBIDIRLM_LIB) and imports it under its module name.
"""

import importlib.util
import math
import os
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    candidates = [os.environ.get("PYBIDIRLM_LIB")] if os.environ.get("PYBIDIRLM_LIB") else []
    for profile in ("release", "debug"):
        for name in ("libpybidirlm.so", "libpybidirlm.dylib", "pybidirlm.dll"):
            candidates.append(str(ROOT / "target" / profile / name))
    lib = next((c for c in candidates if c and os.path.exists(c)), None)
    if lib is None:
        sys.exit("compiled pybidirlm library not found; build it with cargo first")
    # Python only imports extension modules with its own suffix.
    tmp = pathlib.Path(tempfile.mkdtemp())
    target = tmp / "pybidirlm.so"
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("pybidirlm", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    bl = load_module()

    assert bl.variants() == ["NxtUni", "NxtPre", "MskUni", "MskBi", "HybUni", "HybPre"]

    ex = bl.transform([5, 9, 2, 7, 4, 1], [2, 4], 0, 6, 0)
    assert ex["inputs"] == [5, 2, 4, 1, 0, 0], ex
    assert ex["positions"] == [1, 3, 5, 6, 2, 4], ex
    assert ex["targets"][4] == (9, "mask"), ex
    assert ex["targets"][3] is None

    assert bl.attention_allowed(4, 2, 1, 2)
    assert not bl.attention_allowed(4, 2, 3, 4)

    zflops = bl.flops("125M", 100e9) / 1e21
    assert 0.055 < zflops < 0.22, zflops

    tok = bl.Tokenizer.train(["the model reads the mask", "the mask moves to the end"], 270)
    ids = tok.encode("the mask")
    assert tok.decode(ids) == "the mask"

    docs = bl.infill_corpus(64, 0)
    model = bl.Model(32, layers=1, d_model=32, heads=2, max_positions=32, seed=0)
    before = model.perplexity(docs[:8])
    losses = model.train(docs, "MskBi", 20, batch_size_tokens=24 * 8, learning_rate=3e-3, max_len=24)
    assert len(losses) == 20 and all(math.isfinite(x) for x in losses)
    after = model.perplexity(docs[:8])
    assert math.isfinite(before) and math.isfinite(after)

    label, probs = model.infill(docs[0], 2, 1.0)
    assert abs(sum(probs) - 1.0) < 1e-6
    assert model.infill_full(docs[0], 2, [docs[0][1]]) == docs[0][1]

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.ckpt")
        model.save(path)
        again = bl.Model.load(path)
        assert again.checksum() == model.checksum()

    print(f"pybidirlm smoke test passed ({model.num_parameters} parameters, loss {losses[0]:.3f} -> {losses[-1]:.3f})")


if __name__ == "__main__":
    main()
