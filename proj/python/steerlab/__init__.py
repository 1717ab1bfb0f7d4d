"""Python access to the steerlab engine.

The heavy lifting happens in the compiled ``_steerlab`` module; ``Engine`` wraps
its JSON handlers so requests and responses are plain dicts, exactly the bodies
the HTTP API accepts and returns.
"""

import json
import os
from pathlib import Path

from ._steerlab import EngineCore, Model, SteerlabError, Tokenizer, __version__

__all__ = ["Engine", "Model", "Tokenizer", "SteerlabError", "__version__", "load_tokenizer"]


def load_tokenizer(directory):
    directory = Path(directory)
    return Tokenizer.load(directory / "vocab.json", directory / "merges.txt")


class Engine:
    """Shared request handlers over one loaded model.

    Either pass ``model_dir`` (config.json + model.safetensors) or an already
    loaded ``model`` together with ``tokenizer``.
    """

    def __init__(self, model_dir=None, *, tokenizer_dir=None, store_dir=".steerlab", data_dir=None,
                 model=None, tokenizer=None, **options):
        data_dir = data_dir or os.environ.get("STEERLAB_DATA_DIR", "")
        config = {"store_dir": str(store_dir), "data_dir": str(data_dir), **options}
        if model is not None:
            if tokenizer is None:
                tokenizer = load_tokenizer(tokenizer_dir or Path(data_dir) / "gpt2")
            self._core = EngineCore(model, tokenizer, json.dumps(config))
        else:
            config["model_dir"] = str(model_dir)
            config["tokenizer_dir"] = str(tokenizer_dir or Path(data_dir) / "gpt2")
            self._core = EngineCore(json.dumps(config))

    @property
    def model_id(self):
        return self._core.model_id

    def _call(self, name, request):
        return json.loads(getattr(self._core, name)(json.dumps(request)))

    def generate(self, prompt, **request):
        return self._call("generate", {"prompt": prompt, **request})

    def steer(self, prompt, targets, **request):
        return self._call("steer", {"prompt": prompt, "targets": targets, **request})

    def trace(self, n_examples, **request):
        return self._call("trace", {"n_examples": n_examples, **request})

    def extract(self, **request):
        return self._call("extract", request)

    def sweep(self, vector, **request):
        return self._call("sweep", {"vector": vector, **request})

    def eval(self, **request):
        return self._call("eval", request)

    def scenarios(self, **request):
        return self._call("scenarios", request)

    def vectors(self):
        return json.loads(self._core.vectors())
