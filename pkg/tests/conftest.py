"""Shared builders for the test suite.

Import these straight from ``conftest`` (pytest puts the test directory on
sys.path).  Everything here is deterministic given its seed arguments.
"""

import numpy as np

from pqcdiag.channels import make_amplitude_damping, make_depolarizing
from pqcdiag.circuits import (Circuit, NoiseSite, Rotation,
                              observable_from_terms, zero_state)
from pqcdiag.paulis import PauliString


def axis(n, letters, qubits):
    """PauliString on ``n`` qubits with ``letters[i]`` at ``qubits[i]``."""
    codes = [0] * n
    for ch, q in zip(letters, qubits):
        codes[q] = "IXYZ".index(ch)
    return PauliString.from_codes(codes)


def rx_dep_circuit(lam):
    """1-qubit R_X then depolarizing(lam); measure Z from |0>.

    Closed form on the angle grid: MSE(lam) = lam^2 / 2, so MSE(0.1) = 0.005
    and d MSE / d lam at 0.1 equals 0.1.
    """
    c = Circuit(1, [Rotation(axis(1, "X", (0,)), 0)],
                [NoiseSite(0, make_depolarizing(lam, (0,)), (0, 0), "lambda")])
    return c, observable_from_terms([(1.0, "Z")]), zero_state(1)


def random_circuit(n, n_rot, seed, channels=("depolarizing", "amp"),
                   site_rate=0.6):
    """Random rotation circuit with noise sprinkled between gates.

    Returns (circuit, observable, state).  Rotation axes are random X/Y/Z
    words on one or two qubits; each gate is followed by a single-qubit
    noise site with probability ``site_rate`` and a strength drawn from
    U(0.01, 0.3).  The observable is one or two random non-identity Pauli
    words with coefficients in U(-1, 1).
    """
    r = np.random.default_rng(seed)
    ops = []
    sites = []
    k = 0
    for _ in range(n_rot):
        nq = 1 if n == 1 or r.random() < 0.6 else 2
        qs = tuple(sorted(r.choice(n, size=nq, replace=False).tolist()))
        letters = "".join(r.choice(list("XYZ")) for _ in qs)
        ops.append(Rotation(axis(n, letters, qs), k))
        k += 1
        if channels and r.random() < site_rate:
            q = int(r.integers(n))
            kind = r.choice(channels)
            if kind == "depolarizing":
                ch = make_depolarizing(float(r.uniform(0.01, 0.3)), (q,))
                pname = "lambda"
            else:
                ch = make_amplitude_damping(float(r.uniform(0.01, 0.3)), (q,))
                pname = "gamma"
            sites.append(NoiseSite(len(ops) - 1, ch, (0, len(sites)), pname))
    c = Circuit(n, ops, sites)
    terms = []
    for _ in range(int(r.integers(1, 3))):
        letters = "".join(r.choice(list("IXYZ")) for _ in range(n))
        if set(letters) == {"I"}:
            letters = "Z" + letters[1:]
        terms.append((float(r.uniform(-1, 1)), letters))
    return c, observable_from_terms(terms, n=n), zero_state(n)


def rotations_only(n, n_rot, seed):
    """Noise-free random rotation circuit (same gate law as random_circuit)."""
    c, obs, st = random_circuit(n, n_rot, seed, channels=())
    return c, obs, st
