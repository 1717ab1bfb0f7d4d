import json
import os
from pathlib import Path

import numpy as np
import pytest

DATA = Path(os.environ.get("STEERLAB_DATA_DIR", Path(__file__).resolve().parents[2] / "data"))

TINY = {"n_layer": 2, "n_head": 4, "n_embd": 32, "n_positions": 128, "vocab_size": 50257,
        "n_inner": 64, "layer_norm_epsilon": 1e-5, "_name_or_path": "tiny-py"}


def _tiny_weights(rng):
    d, f, v, c = TINY["n_embd"], TINY["n_inner"], TINY["vocab_size"], TINY["n_positions"]
    w = {"transformer.wte.weight": rng.normal(0, 0.2, (v, d)),
         "transformer.wpe.weight": rng.normal(0, 0.05, (c, d)),
         "transformer.ln_f.weight": 1 + rng.normal(0, 0.1, d),
         "transformer.ln_f.bias": rng.normal(0, 0.1, d)}
    for layer in range(TINY["n_layer"]):
        p = f"transformer.h.{layer}."
        shapes = {"ln_1.weight": d, "ln_1.bias": d, "attn.c_attn.weight": (d, 3 * d), "attn.c_attn.bias": 3 * d,
                  "attn.c_proj.weight": (d, d), "attn.c_proj.bias": d, "ln_2.weight": d, "ln_2.bias": d,
                  "mlp.c_fc.weight": (d, f), "mlp.c_fc.bias": f, "mlp.c_proj.weight": (f, d), "mlp.c_proj.bias": d}
        for name, shape in shapes.items():
            w[p + name] = (1 if name.endswith("_1.weight") or name.endswith("_2.weight") else 0) + rng.normal(0, 0.2, shape)
    return {k: np.ascontiguousarray(a, dtype=np.float32) for k, a in w.items()}


@pytest.fixture(scope="session")
def tiny_dir(tmp_path_factory):
    from safetensors.numpy import save_file

    out = tmp_path_factory.mktemp("tiny")
    (out / "config.json").write_text(json.dumps(TINY))
    save_file(_tiny_weights(np.random.default_rng(5)), str(out / "model.safetensors"))
    return out


@pytest.fixture(scope="session")
def data_dir():
    return DATA
