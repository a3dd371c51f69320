#!/usr/bin/env python3
# Copyright 2026 The coarseqca Authors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates the sample inputs in this directory (seeded, deterministic)."""
import json
import pathlib

import numpy as np

HERE = pathlib.Path(__file__).resolve().parent
rng = np.random.default_rng(20261016)


def haar(n):
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def mat(m):
    return [[[round(float(v.real), 15), round(float(v.imag), 15)] for v in row] for row in m]


def dump(name, obj):
    (HERE / name).write_text(json.dumps(obj, indent=1) + "\n")


line = {"kind": "grid", "dim": 1}
qubits = {"space": line, "q": 2}

dump("identity.json", {"net": qubits, "word": []})
dump("shift.json", {"net": qubits, "word": [{"type": "shift", "axis": 0, "amount": 1}]})
dump("qutrit_shift.json", {"net": {"space": line, "q": 3}, "word": [{"type": "shift", "amount": -1}]})
dump("partial_shift.json", {"net": {"space": line, "slots": [2, 3]},
                            "word": [{"type": "shift", "amount": 1, "factor": [2, 3]}]})

pairs = [[2 * i, 2 * i + 1] for i in range(6)]
dump("blockpairs.json", {"net": qubits, "word": [
    {"type": "layer", "blocks": [{"sites": p, "unitary": mat(haar(4))} for p in pairs]},
    {"type": "sitelocal", "units": {str(i): mat(haar(2)) for i in range(12)}},
]})
dump("cert.json", {"window": {"sites": list(range(12))},
                   "blocks": [{"sites": p, "full": True} for p in pairs]})
dump("Y.json", {"sites": list(range(12))})

dump("presentation.json", {
    "ambient": {"space": {"kind": "path", "length": 2}, "slots": [2, 3]},
    "generators": [{"window": [s], "mats": [mat(np.kron(haar(2), np.eye(3))) for _ in range(2)]}
                   for s in ("s0", "s1")],
})
dump("mixed_net.json", {"space": {"kind": "path", "length": 4},
                        "dims": [{"site": "s0", "q": 2}, {"site": "s1", "q": 3},
                                 {"site": "s3", "q": 5}], "default_q": 1})
half = {"kind": "halfgrid", "dim": 1, "nonneg": [True]}
dump("halfline.json", half)
dump("halfline_net.json", {"space": half, "q": 2})
dump("map_shift.json", {"type": "axis_shift", "axis": 0, "amount": 1})
dump("map_identity.json", {"type": "identity"})

dump("manifest.json", {"jobs": [
    ["index", "--qca", "identity.json", "--no-timing"],
    ["index", "--qca", "shift.json"],
    ["index", "--qca", "qutrit_shift.json"],
    ["index", "--qca", "partial_shift.json"],
    ["validate", "--qca", "blockpairs.json", "--window", "0..11"],
    ["decompose", "--qca", "blockpairs.json", "--cert", "cert.json", "--support", "Y.json"],
    ["split", "--net", "presentation.json"],
    ["class", "--net", "mixed_net.json"],
    ["flasque", "--net", "halfline_net.json", "--map", "map_shift.json", "--window", "0..7"],
    ["pushforward", "--net", "mixed_net.json", "--map", "map_identity.json"],
]})
