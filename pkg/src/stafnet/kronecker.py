"""Kronecker-equivalent sine networks and lattice / potential-frequency counting.

A network whose every core layer applies the shared activation
``rho(a) = sum_i C_i sin(Omega_i a + Phi_i)`` computes the same function as a
plain sine network that is ``tau`` times wider. Writing the stacked hidden
state as ``zbar = sin(Omega (x) a + Phi (x) J)`` (term-major), ``z = (C^T (x) I) zbar``
and the layer maps become

* first layer:  ``Wbar = Omega (x) W``
* later layers: ``Wbar = (Omega (x) C^T) (x) W``  (equal to ``(Omega (x) W)(C^T (x) I)``)
* biases:       ``Bbar = Phi (x) J + Omega (x) B``
* read-out:     ``Wbar = C^T (x) I`` with no bias.

Trailing dummy layers act on the output only and are carried over unchanged.
"""

from dataclasses import dataclass, replace
from fractions import Fraction
from math import comb

import numpy as np

from .activation import ActivationParams, SharingMode
from .core_math import Rng, as_matrix, kron
from .errors import CapacityError, PreconditionError, ShapeError, ValidationError
from .network import ActivationKind, Network, NetworkConfig, build_network

LATTICE_CAP = 10**7


@dataclass
class EquivalentNetwork:
    network: Network  # sine network, omega0 = 1, affine read-out
    tau: int
    source_widths: list

    def __call__(self, inputs) -> np.ndarray:
        return self.network(inputs)

    @property
    def hidden_widths(self):
        return list(self.network.config.hidden_widths)


def core_depth(net: Network) -> int:
    """Number of activated layers L of a theorem-form network, dummies included."""
    return net.config.depth


def add_dummy_layer(net: Network) -> Network:
    """Append a zero residual layer; the function is unchanged and the depth parity flips."""
    cfg = net.config
    out = net.copy()
    out.config = replace(cfg, hidden_widths=list(cfg.hidden_widths), n_dummy=cfg.n_dummy + 1)
    out.weights.append(np.zeros((cfg.output_dim, cfg.output_dim)))
    out.biases.append(np.zeros(cfg.output_dim))
    return out


def to_per_network(net: Network) -> Network:
    """Re-express a per-layer net with a single shared triple; rejects genuinely per-layer nets."""
    cfg = net.config
    if cfg.sharing is SharingMode.PER_NETWORK:
        return net
    if cfg.sharing is SharingMode.PER_NEURON:
        raise PreconditionError("per-neuron activations have no single (C, Omega, Phi) triple")
    first = net.activations[0]
    for p in net.activations[1:]:
        if not all(np.array_equal(a, b) for a, b in zip(first.arrays(), p.arrays())):
            raise PreconditionError(
                "the Kronecker construction needs one (C, Omega, Phi) triple shared by every layer; "
                "this per-layer network uses different triples"
            )
    out = net.copy()
    out.config = replace(cfg, hidden_widths=list(cfg.hidden_widths), sharing=SharingMode.PER_NETWORK)
    out.activations = [first.copy()]
    return out


def build_equivalent(net: Network) -> EquivalentNetwork:
    """Plain sine network computing exactly the same function as ``net``.

    ``net`` must be a STAF network with per-network sharing, an activated
    output layer and an even number of layers (counting dummy layers).
    """
    cfg = net.config
    if cfg.activation is not ActivationKind.STAF:
        raise PreconditionError("build_equivalent needs a STAF network")
    if cfg.sharing is not SharingMode.PER_NETWORK:
        raise PreconditionError(
            f"build_equivalent needs per-network sharing, got {cfg.sharing.value}; "
            "see to_per_network for nets whose layers share identical parameters"
        )
    if not cfg.activated_output:
        raise PreconditionError("build_equivalent needs every core layer activated (activated_output=True)")
    if cfg.depth % 2:
        raise PreconditionError(
            f"network has an odd number of layers (L={cfg.depth}); call add_dummy_layer first"
        )
    p: ActivationParams = net.activations[0]
    tau = p.tau
    omega = p.frequencies[:, None]
    phase = p.phases[:, None]
    c_row = p.amplitudes[None, :]
    weights, biases = [], []
    for l in range(cfg.n_core):
        w = net.weights[l]
        if l == 0:
            wbar = kron(omega, w)
        else:
            wbar = kron(kron(omega, c_row), w)
        bbar = kron(phase, np.ones((w.shape[0], 1))) + kron(omega, net.biases[l][:, None])
        weights.append(wbar)
        biases.append(bbar.ravel())
    f_last = cfg.widths[cfg.n_core]
    weights.append(kron(c_row, np.eye(f_last)))
    biases.append(np.zeros(f_last))
    for l in range(cfg.n_core, cfg.depth):
        weights.append(net.weights[l].copy())
        biases.append(net.biases[l].copy())
    eq_cfg = NetworkConfig(
        input_dim=cfg.input_dim,
        output_dim=cfg.output_dim,
        hidden_widths=[tau * f for f in cfg.widths[1 : cfg.n_core + 1]],
        activation=ActivationKind.SINE,
        omega0=1.0,
        seed=cfg.seed,
        n_dummy=cfg.n_dummy,
    )
    return EquivalentNetwork(Network(eq_cfg, weights, biases), tau, list(cfg.widths))


def random_theorem_network(widths, tau: int, seed: int, omega0: float = 30.0) -> Network:
    """STAF net with one shared triple and every layer activated; ``widths = (F0, F1, ..., FL)``."""
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ValidationError("need at least an input and one layer width")
    cfg = NetworkConfig(
        input_dim=widths[0],
        output_dim=widths[-1],
        hidden_widths=widths[1:-1],
        activation=ActivationKind.STAF,
        sharing=SharingMode.PER_NETWORK,
        tau=tau,
        omega0=omega0,
        seed=seed,
        activated_output=True,
    )
    return build_network(cfg)


def equivalence_gap(net: Network, eq: EquivalentNetwork, inputs) -> float:
    x = as_matrix(inputs)
    return float(np.max(np.abs(net(x) - eq(x))))


def verify_equivalence(widths, tau: int, seed: int, n_inputs: int = 100) -> dict:
    """Build a random net (adding a dummy layer if L is odd) and compare on random inputs."""
    net = random_theorem_network(widths, tau, seed)
    added = 0
    if net.config.depth % 2:
        net = add_dummy_layer(net)
        added = 1
    eq = build_equivalent(net)
    x = Rng(seed).spawn(1).random((n_inputs, net.config.input_dim)) * 2.0 - 1.0
    return {
        "max_abs_diff": equivalence_gap(net, eq, x),
        "n_inputs": n_inputs,
        "seed": seed,
        "L": net.config.depth - added,
        "tau": tau,
        "dummy_layers_added": added,
        "equivalent_widths": eq.hidden_widths,
    }


# --- lattice counting -------------------------------------------------------


def _check_counts(T, K):
    if int(T) != T or int(K) != K or T < 0 or K < 0:
        raise ValidationError(f"T and K must be non-negative integers, got T={T}, K={K}")
    return int(T), int(K)


def delannoy_count(T: int, K: int) -> int:
    """Number of integer vectors in Z^T with L1 norm at most K (exact, arbitrary size)."""
    T, K = _check_counts(T, K)
    return sum(comb(K, i) * comb(T, i) * 2**i for i in range(min(K, T) + 1))


@dataclass
class LatticeSet:
    T: int
    K: int
    points: np.ndarray  # (n, T) int64, lexicographic order

    def __len__(self):
        return self.points.shape[0]


def enumerate_lattice(T: int, K: int, cap: int = LATTICE_CAP) -> LatticeSet:
    """Every s in Z^T with sum |s_t| <= K, without duplicates, in lexicographic order."""
    T, K = _check_counts(T, K)
    n = delannoy_count(T, K)
    if n > cap:
        raise CapacityError(f"|V({T},{K})| = {n} exceeds the enumeration cap {cap}")
    pts = np.zeros((1, 0), dtype=np.int64)
    rem = np.array([K], dtype=np.int64)
    for _ in range(T):
        new_pts, new_rem = [], []
        for v in range(-K, K + 1):
            keep = rem >= abs(v)
            if not keep.any():
                continue
            col = np.full((int(keep.sum()), 1), v, dtype=np.int64)
            new_pts.append(np.hstack([pts[keep], col]))
            new_rem.append(rem[keep] - abs(v))
        pts = np.vstack(new_pts)
        rem = np.concatenate(new_rem)
    if T:
        pts = pts[np.lexsort(pts.T[::-1])]
    return LatticeSet(T, K, pts)


@dataclass
class FrequencySet:
    psi: np.ndarray  # (T, D)
    radius: int
    lattice: LatticeSet
    vectors: np.ndarray  # (n, D), row k = sum_t s_kt psi_t
    n_distinct: int
    tol: float = 0.0


def lattice_map(points: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """``sum_t s_t psi_t`` accumulated in coordinate order."""
    out = np.zeros((points.shape[0], psi.shape[1]))
    for t in range(psi.shape[0]):
        out += points[:, t : t + 1] * psi[t]
    return out


def count_distinct(vectors: np.ndarray, tol: float = 0.0) -> int:
    """Distinct rows: exact bit equality when ``tol == 0``, else equality after snapping to a ``tol`` grid."""
    if vectors.shape[0] == 0:
        return 0
    v = vectors + 0.0  # folds -0.0 into +0.0
    if tol > 0:
        v = np.round(v / tol)
    return int(np.unique(v, axis=0).shape[0])


def potential_frequencies(psi, K: int, tol: float = 0.0, cap: int = LATTICE_CAP) -> FrequencySet:
    psi = as_matrix(psi)
    if tol < 0:
        raise ValidationError("tol must be non-negative")
    lattice = enumerate_lattice(psi.shape[0], K, cap)
    vectors = lattice_map(lattice.points, psi)
    return FrequencySet(psi, int(K), lattice, vectors, count_distinct(vectors, tol), tol)


def tau_expansion_ratio(T: int, K: int, tau: int) -> float:
    """|V(tau T, K)| / |V(T, K)|, computed exactly then rounded."""
    T, K = _check_counts(T, K)
    if int(tau) != tau or tau < 1:
        raise ValidationError(f"tau must be a positive integer, got {tau}")
    return float(Fraction(delannoy_count(int(tau) * T, K), delannoy_count(T, K)))


def first_layer_embedding(net: Network) -> np.ndarray:
    """Frequency embedding Psi (rows are input-frequency vectors) of a STAF or sine network."""
    cfg = net.config
    w = net.weights[0]
    if cfg.activation is ActivationKind.SINE:
        return cfg.omega0 * w
    if cfg.activation is ActivationKind.STAF and cfg.sharing is not SharingMode.PER_NEURON:
        return kron(net.activation_for(0).frequencies[:, None], w)
    raise ShapeError("embedding is defined for sine nets and shared-parameter STAF nets")
