"""Independent reference implementations used only by the tests.

Nothing here imports the package's simulation or loss code: circuits are
multiplied out as explicit Kronecker products, expectations use traces of
density matrices, and losses are enumerated pair by pair in plain loops.
"""

import math

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
P0 = np.array([[1, 0], [0, 0]], dtype=complex)
P1 = np.array([[0, 0], [0, 1]], dtype=complex)


def expm_pauli(P, theta):
    # exp(-i theta P / 2) for an involutory P
    return math.cos(theta / 2) * np.eye(len(P)) - 1j * math.sin(theta / 2) * P


def embed(ops: dict, n: int) -> np.ndarray:
    """Kronecker product with qubit 0 as the least significant factor."""
    out = np.array([[1.0 + 0j]])
    for q in reversed(range(n)):
        out = np.kron(out, ops.get(q, I2))
    return out


def gate_matrix(kind: str, wires, theta, n: int) -> np.ndarray:
    if kind == "RX":
        return embed({wires[0]: expm_pauli(X, theta)}, n)
    if kind == "RY":
        return embed({wires[0]: expm_pauli(Y, theta)}, n)
    c, t = wires
    target = expm_pauli(X, theta) if kind == "CRX" else X
    return embed({c: P0}, n) + embed({c: P1, t: target}, n)


def dense_run(gates, n: int) -> np.ndarray:
    """``gates``: iterable of (kind, wires, theta-or-None)."""
    U = np.eye(2 ** n, dtype=complex)
    for kind, wires, theta in gates:
        U = gate_matrix(kind, wires, theta, n) @ U
    psi = np.zeros(2 ** n, dtype=complex)
    psi[0] = 1
    return U @ psi


def z_expectation_dm(psi: np.ndarray, qubit: int, n: int) -> float:
    rho = np.outer(psi, psi.conj())
    return float(np.trace(rho @ embed({qubit: Z}, n)).real)


def qnn_dense(width, ansatz, layers, theta, angles):
    """Loader + ansatz built gate by gate from the circuit descriptions."""
    gates = [("RX", (k,), angles[k]) for k in range(width)]
    t = iter(theta)
    for _ in range(layers):
        gates += [("RY", (q,), next(t)) for q in range(width)]
        if ansatz == "ring":
            gates += [("CRX", (q, (q + 1) % width), next(t)) for q in range(width)]
        else:
            gates += [("CNOT", (i, j), None) for i in range(width) for j in range(i + 1, width)]
    if ansatz != "ring":
        gates += [("RY", (q,), next(t)) for q in range(width)]
    psi = dense_run(gates, width)
    return np.array([z_expectation_dm(psi, q, width) for q in range(width)]), psi


def nt_xent_enumerate(z, pair, tau) -> float:
    """Loop over every anchor and every other view explicitly."""
    z = [np.asarray(r, dtype=float) for r in z]
    u = [r / math.sqrt(sum(x * x for x in r)) for r in z]
    total = 0.0
    for a in range(len(u)):
        p = pair[a]
        num = math.exp(float(np.dot(u[a], u[p])) / tau)
        den = num
        for k in range(len(u)):
            if k != a and k != p:
                den += math.exp(float(np.dot(u[a], u[k])) / tau)
        total += -math.log(num / den)
    return total


def hs_dense(states, pair):
    """Per-pair tr((rho - sigma)^2) from explicit density matrices."""
    states = [np.asarray(s, dtype=complex) for s in states]
    m = len(states)
    dms = [np.outer(s, s.conj()) for s in states]
    out = []
    for a in range(m):
        b = pair[a]
        if b < a:
            continue
        rho = 0.5 * (dms[a] + dms[b])
        sigma = sum(dms[k] for k in range(m) if k not in (a, b)) / (m - 2)
        d = rho - sigma
        out.append(float(np.trace(d @ d).real))
    return np.array(out)


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=float)
    g = np.zeros(x.shape + np.shape(f(x)))
    for i in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2 * h)
    return g
