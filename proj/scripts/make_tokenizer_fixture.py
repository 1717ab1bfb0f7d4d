#!/usr/bin/env python3
"""Freeze GPT-2 tokenizer encodings from Hugging Face's slow GPT2Tokenizer."""

import argparse
import json
import pathlib

from transformers import GPT2Tokenizer

CASES = [
    "",
    " ",
    "   ",
    "hello",
    " hello",
    "Hello world",
    "hello  world",
    "hello\nworld",
    "\n\n",
    "Q: hot\nA: cold\n\nQ: big\nA:",
    "I'm sure you've seen they'll go, we'd say it's done",
    "DON'T SHOUT'S",
    "3.14159 and 1,000,000 and 2024-06-11",
    "naïve café résumé",
    "Ελληνικά και русский текст",
    "日本語のテキスト",
    "emoji 👍🏽 and 🇺🇸 flags",
    "tabs\tand\r\nwindows  newlines   ",
    "trailing spaces   ",
    "   leading spaces",
    "<|endoftext|>",
    "a<|endoftext|>b",
    "!!!???...,,,;;;",
    "The U.S. District Court conducted the trial of Farooq Hassan",
    "non-partisan vs partisan",
    " love",
    " hate",
    " non-breaking em space",
    "x" * 300,
    "supercalifragilisticexpialidocious",
    "mixed123numbers456and789letters",
    "٣٤ arabic digits",
    "combining é accent",
]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tokenizer", required=True, type=pathlib.Path)
    ap.add_argument("--out", required=True, type=pathlib.Path)
    args = ap.parse_args()

    tok = GPT2Tokenizer(str(args.tokenizer / "vocab.json"), str(args.tokenizer / "merges.txt"))
    cases = [{"text": t, "ids": tok.encode(t)} for t in CASES]
    named = {name: tok.encode(text) for name, text in {"love": " love", "hate": " hate", "cold": " cold"}.items()}
    args.out.write_text(json.dumps({"cases": cases, "named": named}, ensure_ascii=False, indent=1) + "\n")


if __name__ == "__main__":
    main()
