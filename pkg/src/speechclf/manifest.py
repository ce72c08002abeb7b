"""Run manifests: digests that chain pipeline stages together.

Each CLI stage writes ``<primary output>.manifest.json`` naming the stage,
a hash of its effective configuration and the sha256 of every input and
output (paths stored relative to the manifest, so a relocated run tree
still verifies). ``verify_chain`` re-hashes the files and checks that any
input that some earlier stage produced still matches that stage's record.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

MANIFEST_VERSION = 1
MANIFEST_SUFFIX = ".manifest.json"


class ManifestError(ValueError):
    pass


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def write_manifest(stage: str, primary_output: str | Path, config: dict,
                   inputs: list[str | Path], outputs: list[str | Path]) -> Path:
    primary_output = Path(primary_output)
    base = primary_output.parent
    doc = {
        "version": MANIFEST_VERSION,
        "stage": stage,
        "config_hash": config_hash(config),
        "config": config,
        "inputs": {_rel(p, base): sha256_file(p) for p in inputs},
        "outputs": {_rel(p, base): sha256_file(p) for p in outputs},
    }
    path = Path(str(primary_output) + MANIFEST_SUFFIX)
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n",
                    encoding="utf-8")
    return path


def _rel(path: str | Path, base: Path) -> str:
    try:
        return str(Path(path).resolve().relative_to(base.resolve()))
    except ValueError:
        return str(Path(path))


def load_manifest(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"{path}: manifest version {doc.get('version')!r}")
    return doc


def verify_chain(manifest_paths: list[str | Path]) -> list[str]:
    """Check every manifest against the files on disk and against the
    outputs of the other manifests. Returns a list of problems (empty
    means the chain is consistent)."""
    problems: list[str] = []
    produced: dict[str, str] = {}  # file name -> digest recorded by producer
    docs = []
    for mpath in manifest_paths:
        mpath = Path(mpath)
        doc = load_manifest(mpath)
        docs.append((mpath, doc))
        for rel, digest in doc["outputs"].items():
            produced[Path(rel).name] = digest

    for mpath, doc in docs:
        base = mpath.parent
        for role in ("inputs", "outputs"):
            for rel, digest in doc[role].items():
                file_path = base / rel
                if not file_path.exists():
                    problems.append(f"{mpath.name}: missing {role[:-1]} {rel}")
                    continue
                actual = sha256_file(file_path)
                if actual != digest:
                    problems.append(
                        f"{mpath.name}: {role[:-1]} {rel} digest mismatch")
        for rel, digest in doc["inputs"].items():
            name = Path(rel).name
            if name in produced and produced[name] != digest:
                problems.append(
                    f"{mpath.name}: input {rel} does not match the recorded "
                    f"output of its producing stage")
    return problems
