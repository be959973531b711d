"""Run manifests: what ran, with which config, producing which bytes.

Every CLI command that writes files drops a manifest JSON next to its
outputs: the exact command line, a hash of the effective config, the
seed, start/end timestamps, input/output paths, and a content hash per
written artifact.  In deterministic mode timestamps are zeroed so the
manifest itself is bit-reproducible.
"""

import hashlib
import json
import time
from dataclasses import dataclass, field


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(mapping: dict) -> str:
    """Hash of the effective configuration, order-insensitive."""
    lines = [f"{k} = {mapping[k]}" for k in sorted(mapping)]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def git_blob_sha1(path) -> str:
    """Content id matching `git hash-object` on the same file."""
    with open(path, "rb") as fh:
        data = fh.read()
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    deterministic: bool = False
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    started: float = 0.0
    finished: float = 0.0

    def __post_init__(self):
        if not self.deterministic and not self.started:
            self.started = time.time()

    def add_input(self, path):
        self.inputs.append(str(path))

    def add_output(self, path):
        self.outputs.append(str(path))

    def write(self, path):
        if not self.deterministic:
            self.finished = time.time()
        payload = {
            "command": self.command,
            "config_hash": config_hash(self.config),
            "config": {k: self.config[k] for k in sorted(self.config)},
            "seed": self.seed,
            "deterministic": self.deterministic,
            "started": self.started,
            "finished": self.finished,
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "artifact_hashes": {p: file_sha256(p) for p in self.outputs},
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return payload


def load_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
