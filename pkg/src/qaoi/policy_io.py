"""Text serialisation of randomized policies.

Layout::

    # qaoi-policy v1
    # kind joint|truncated
    # spec_hash <16 hex>
    # spec <json>
    [source <i>]            (truncated policies only, one section per source)
    <state_index> <action_id> <probability>

Only nonzero probabilities are written, at 17 significant digits, which
round-trips IEEE doubles exactly. Action ids are joint action indices for
joint policies and local action codes (0 idle, 1 send, 2 sample) for
per-source sections.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import SystemSpec
from .occupancy import RandomizedPolicy
from .weakly_coupled import PerSourcePolicy, TruncatedPolicy

MAGIC = "# qaoi-policy v1"


class PolicyFormatError(ValueError):
    pass


def _rows(f: np.ndarray, out: list[str], codes=None):
    for s, a in zip(*np.nonzero(f)):
        action = a if codes is None else codes[a]
        out.append(f"{s} {action} {f[s, a]:.17g}")


def dumps(policy: RandomizedPolicy | TruncatedPolicy) -> str:
    spec = policy.spec
    kind = "joint" if isinstance(policy, RandomizedPolicy) else "truncated"
    lines = [
        MAGIC,
        f"# kind {kind}",
        f"# spec_hash {spec.spec_hash()}",
        f"# spec {json.dumps(spec.to_dict(), sort_keys=True)}",
    ]
    if kind == "joint":
        _rows(policy.f, lines)
    else:
        for ps in policy.per_source:
            lines.append(f"[source {ps.source}]")
            _rows(ps.f, lines, ps.actions)
    return "\n".join(lines) + "\n"


def save(policy, path) -> None:
    Path(path).write_text(dumps(policy))


def loads(text: str, spec: SystemSpec | None = None):
    """Parse a policy. If ``spec`` is given its hash must match the header."""
    lines = text.splitlines()
    if not lines or lines[0] != MAGIC:
        raise PolicyFormatError("missing policy header")
    header = {}
    body = []
    for ln in lines[1:]:
        if ln.startswith("# "):
            key, _, value = ln[2:].partition(" ")
            header[key] = value
        elif ln.strip():
            body.append(ln)
    stored = SystemSpec.from_dict(json.loads(header["spec"]))
    if stored.spec_hash() != header.get("spec_hash"):
        raise PolicyFormatError("spec hash does not match embedded spec")
    if spec is not None and spec.spec_hash() != header["spec_hash"]:
        raise PolicyFormatError(
            f"policy was built for spec {header['spec_hash']}, not {spec.spec_hash()}")
    spec = stored
    if header.get("kind") == "joint":
        f = np.zeros((spec.joint_size, len(spec.actions)))
        for ln in body:
            s, a, prob = ln.split()
            f[int(s), int(a)] = float(prob)
        return RandomizedPolicy(f, spec)
    if header.get("kind") == "truncated":
        n_loc = spec.source_size
        tables = [np.zeros((n_loc, len(src.local_actions))) for src in spec.sources]
        current = None
        for ln in body:
            if ln.startswith("[source"):
                current = int(ln.strip("[]").split()[1])
                continue
            if current is None:
                raise PolicyFormatError("row outside a [source] section")
            s, code, prob = ln.split()
            k = spec.sources[current].local_actions.index(int(code))
            tables[current][int(s), k] = float(prob)
        per_source = tuple(
            PerSourcePolicy(i, tables[i], src.local_actions) for i, src in enumerate(spec.sources)
        )
        return TruncatedPolicy(spec, per_source)
    raise PolicyFormatError(f"unknown policy kind {header.get('kind')!r}")


def load(path, spec: SystemSpec | None = None):
    return loads(Path(path).read_text(), spec)
