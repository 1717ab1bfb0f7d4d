#!/usr/bin/env python3
"""Write a seeded GPT-2-small-shaped checkpoint (config.json + model.safetensors).

Trained GPT-2 weights are not shipped with the repository. This checkpoint has
the published architecture and tensor names, with weights drawn from a fixed
numpy PCG64 stream, so every machine regenerates the same bytes. Biases and
layer-norm parameters are perturbed away from their usual init so the parity
test exercises every tensor.
"""

import argparse
import json
import pathlib

import numpy as np
from safetensors.numpy import save_file

SHAPE = dict(n_layer=12, n_head=12, n_embd=768, n_positions=1024, vocab_size=50257)


def build(seed: int) -> dict:
    rng = np.random.Generator(np.random.PCG64(seed))
    d, L, V, P = SHAPE["n_embd"], SHAPE["n_layer"], SHAPE["vocab_size"], SHAPE["n_positions"]

    def normal(shape, std):
        return (rng.standard_normal(shape) * std).astype(np.float32)

    t = {
        "wte.weight": normal((V, d), 0.1),
        "wpe.weight": normal((P, d), 0.02),
        "ln_f.weight": 1.0 + normal((d,), 0.1),
        "ln_f.bias": normal((d,), 0.02),
    }
    proj_std = 0.02 / np.sqrt(2 * L)
    for i in range(L):
        p = f"h.{i}."
        t[p + "ln_1.weight"] = 1.0 + normal((d,), 0.1)
        t[p + "ln_1.bias"] = normal((d,), 0.02)
        t[p + "attn.c_attn.weight"] = normal((d, 3 * d), 0.02)
        t[p + "attn.c_attn.bias"] = normal((3 * d,), 0.02)
        t[p + "attn.c_proj.weight"] = normal((d, d), proj_std)
        t[p + "attn.c_proj.bias"] = normal((d,), 0.02)
        t[p + "ln_2.weight"] = 1.0 + normal((d,), 0.1)
        t[p + "ln_2.bias"] = normal((d,), 0.02)
        t[p + "mlp.c_fc.weight"] = normal((d, 4 * d), 0.02)
        t[p + "mlp.c_fc.bias"] = normal((4 * d,), 0.02)
        t[p + "mlp.c_proj.weight"] = normal((4 * d, d), proj_std)
        t[p + "mlp.c_proj.bias"] = normal((d,), 0.02)
    return t


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, type=pathlib.Path)
    ap.add_argument("--seed", type=int, default=20240611)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    if (args.out / "model.safetensors").exists() and (args.out / "config.json").exists():
        return
    config = {
        "model_type": "gpt2",
        "architectures": ["GPT2LMHeadModel"],
        "_name_or_path": f"gpt2-small-seeded-{args.seed}",
        "n_ctx": SHAPE["n_positions"],
        "n_inner": None,
        "activation_function": "gelu_new",
        "layer_norm_epsilon": 1e-5,
        **SHAPE,
    }
    save_file(build(args.seed), str(args.out / "model.safetensors"), metadata={"format": "pt"})
    (args.out / "config.json").write_text(json.dumps(config, indent=2) + "\n")


if __name__ == "__main__":
    main()
