#!/usr/bin/env python3
"""Freeze reference logits for the parity test using Hugging Face transformers.

Runs GPT2LMHeadModel (fp32, eager attention) on a checkpoint directory and
records, for each prompt: token ids, argmax of the final position, the top-5
final logits, and the logits of a fixed probe-id set at every position.
"""

import argparse
import hashlib
import json
import pathlib

import torch
from transformers import GPT2LMHeadModel, GPT2Tokenizer

PROMPTS = [
    "The quick brown fox jumps over the lazy dog.",
    "Q: hot\nA: cold\n\nQ: big\nA:",
    "I believe in equality",
    "The U.S. District Court conducted the trial of Farooq Hassan",
    "naïve café — 3.14159 isn't 42!",
]
PROBE_IDS = [0, 11, 13, 198, 262, 286, 290, 318, 340, 379, 1842, 5465, 10165, 50256]


def sha256(path: pathlib.Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", required=True, type=pathlib.Path)
    ap.add_argument("--tokenizer", required=True, type=pathlib.Path)
    ap.add_argument("--out", required=True, type=pathlib.Path)
    args = ap.parse_args()

    torch.set_grad_enabled(False)
    tok = GPT2Tokenizer(str(args.tokenizer / "vocab.json"), str(args.tokenizer / "merges.txt"))
    model = GPT2LMHeadModel.from_pretrained(str(args.model), attn_implementation="eager", torch_dtype=torch.float32)
    model.eval()

    cases = []
    for prompt in PROMPTS:
        ids = tok.encode(prompt)
        logits = model(torch.tensor([ids])).logits[0].to(torch.float64)
        last = logits[-1]
        top = torch.topk(last, 5)
        cases.append({
            "prompt": prompt,
            "ids": ids,
            "argmax": int(torch.argmax(last)),
            "top5": [{"id": int(i), "logit": float(v)} for v, i in zip(top.values, top.indices)],
            "top2_gap": float(top.values[0] - top.values[1]),
            "probe_logits": [[float(row[i]) for i in PROBE_IDS] for row in logits],
        })
    out = {
        "generator": f"transformers {__import__('transformers').__version__}, torch {torch.__version__}",
        "model_sha256": sha256(args.model / "model.safetensors"),
        "probe_ids": PROBE_IDS,
        "cases": cases,
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(out, indent=1) + "\n")


if __name__ == "__main__":
    main()
