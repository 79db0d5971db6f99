"""Finite random combs: sampling, run-length structure, k-chain classification.

A comb is a spine of N sites, each of which either carries a semi-infinite
tooth (chi = True) or is a bare hole (chi = False).  Array index i in
``chi`` is spine site i + 1; for open combs the sites 0 and N + 1 are
Dirichlet endpoints that never carry teeth.
"""
from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

BOUNDARIES = ("open", "periodic")


@dataclass(frozen=True, eq=False)
class CombConfig:
    chi: np.ndarray
    boundary: str = "open"
    hole_prob: float = float("nan")
    seed: int | None = None

    def __post_init__(self):
        chi = np.array(self.chi, dtype=bool).ravel()
        chi.setflags(write=False)
        object.__setattr__(self, "chi", chi)
        if self.boundary not in BOUNDARIES:
            raise InvalidArgument(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        if chi.size == 0:
            raise InvalidArgument("a comb needs at least one spine site")
        if self.boundary == "periodic" and chi.size < 3:
            raise InvalidArgument("periodic combs need at least 3 sites")

    @property
    def n_sites(self) -> int:
        return int(self.chi.size)

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def length(self) -> int:
        """L: number of spine bonds, N + 1 for open and N for periodic combs."""
        return self.n_sites if self.periodic else self.n_sites + 1

    @property
    def teeth(self) -> np.ndarray:
        return np.flatnonzero(self.chi)

    @property
    def holes(self) -> np.ndarray:
        return np.flatnonzero(~self.chi)

    @property
    def n_teeth(self) -> int:
        return int(self.chi.sum())

    @property
    def n_holes(self) -> int:
        return self.n_sites - self.n_teeth

    def occupancy(self) -> str:
        return occupancy_string(self.chi)

    def digest(self) -> str:
        return hashlib.sha256(f"{self.boundary}:{self.occupancy()}".encode()).hexdigest()

    def complement(self) -> "CombConfig":
        """Same spine with teeth and holes exchanged."""
        return CombConfig(~self.chi, self.boundary, 1.0 - self.hole_prob, self.seed)

    def __eq__(self, other):
        if not isinstance(other, CombConfig):
            return NotImplemented
        return self.boundary == other.boundary and np.array_equal(self.chi, other.chi)

    def __hash__(self):
        return hash((self.boundary, self.occupancy()))

    def __repr__(self):
        occ = self.occupancy()
        if len(occ) > 40:
            occ = occ[:37] + "..."
        return f"CombConfig({self.boundary}, N={self.n_sites}, chi={occ})"

    @classmethod
    def from_string(cls, occ: str, boundary: str = "open") -> "CombConfig":
        """Build from a 0/1 string (1 = tooth); 'T'/'H' are accepted too."""
        table = {"1": True, "0": False, "T": True, "H": False, "t": True, "h": False}
        try:
            chi = [table[c] for c in occ.strip()]
        except KeyError as exc:
            raise InvalidArgument(f"bad occupancy character {exc.args[0]!r}") from None
        return cls(np.array(chi, dtype=bool), boundary)


def occupancy_string(chi) -> str:
    return "".join("1" if c else "0" for c in np.asarray(chi, dtype=bool))


def _check_p(p):
    if not (0.0 <= p <= 1.0):
        raise InvalidArgument(f"hole probability must lie in [0, 1], got {p}")


def sample_comb(p: float, n_sites: int, boundary: str = "open", seed: int = 0) -> CombConfig:
    """Each site is independently a hole with probability p."""
    _check_p(p)
    if n_sites < 1:
        raise InvalidArgument("n_sites must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    chi = rng.random(n_sites) >= p
    return CombConfig(chi, boundary, float(p), int(seed))


def sample_seed(master_seed: int, index: int) -> int:
    """64-bit seed of ensemble member ``index``, independent of any execution order."""
    ss = np.random.SeedSequence([int(master_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_ensemble(p, n_sites, boundary, master_seed, n_samples):
    return [sample_comb(p, n_sites, boundary, sample_seed(master_seed, i)) for i in range(n_samples)]


def ensemble_manifest(p, n_sites, boundary, master_seed, n_samples, combs=None) -> dict:
    if combs is None:
        combs = sample_ensemble(p, n_sites, boundary, master_seed, n_samples)
    h = hashlib.sha256()
    for c in combs:
        h.update(c.occupancy().encode())
        h.update(b"\n")
    return {
        "p": float(p),
        "n_sites": int(n_sites),
        "boundary": boundary,
        "master_seed": int(master_seed),
        "n_samples": int(n_samples),
        "occupancy_digest": h.hexdigest(),
    }


@dataclass(frozen=True)
class RunLengths:
    tooth_runs: tuple
    hole_runs: tuple

    @property
    def n_t_odd(self) -> int:
        return sum(1 for r in self.tooth_runs if r % 2)

    @property
    def n_t_even(self) -> int:
        return len(self.tooth_runs) - self.n_t_odd


def run_lengths(comb: CombConfig) -> RunLengths:
    """Maximal runs of equal occupancy; for periodic combs a run may wrap."""
    chi = list(comb.chi)
    if comb.periodic and len(set(chi)) == 2:
        # rotate so that the sequence starts right after a species change
        k = next(i for i in range(len(chi)) if chi[i] != chi[i - 1])
        chi = chi[k:] + chi[:k]
    teeth, holes = [], []
    for key, grp in itertools.groupby(chi):
        (teeth if key else holes).append(len(list(grp)))
    return RunLengths(tuple(teeth), tuple(holes))


@dataclass(frozen=True)
class ChainClass:
    k_tooth: frozenset
    k_hole: frozenset
    uniform: bool

    @property
    def is_generic(self) -> bool:
        return not self.uniform and not self.k_tooth and not self.k_hole


def _primes_dividing(n):
    out = []
    for k in range(2, n + 1):
        if n % k == 0 and all(k % q for q in range(2, int(k ** 0.5) + 1)):
            out.append(k)
    return out


def _k_chains(comb, species):
    """Primes k for which ``species`` sites (True = teeth) form a k-chain."""
    pos = np.flatnonzero(comb.chi == species) + 1
    n_other = comb.n_sites - pos.size
    if n_other == 0:
        return frozenset()
    L = comb.length
    found = []
    for k in _primes_dividing(L):
        if comb.periodic:
            if pos.size and np.all(pos % k == pos[0] % k):
                found.append(k)
        elif np.all(pos % k == 0):
            # endpoints 0 and L count as the species and are multiples of k
            found.append(k)
    return frozenset(found)


def classify_chain(comb: CombConfig) -> ChainClass:
    """Prime k-tooth and k-hole structure.

    For open combs the endpoints count as the species being tested.  A
    k-tooth set is only reported when the comb has at least one hole, and a
    k-hole set only when it has at least one tooth.
    """
    uniform = comb.n_teeth in (0, comb.n_sites)
    return ChainClass(_k_chains(comb, True), _k_chains(comb, False), uniform)


# asymptotic string densities for i.i.d. combs

def hole_string_density(p, ell):
    return (1 - p) ** 2 * p ** np.asarray(ell)


def tooth_string_density(p, ell):
    return p ** 2 * (1 - p) ** np.asarray(ell)


def tooth_odd_density(p):
    return p * (1 - p) / (2 - p)


def tooth_even_density(p):
    return p * (1 - p) ** 2 / (2 - p)


def e_gt4_density(p):
    """Number of E > 4 states per spine site, (1 - p + D_t,odd) / 2."""
    return (1 - p) / (2 - p)


@dataclass
class StringDensities:
    p: float
    n_sites: int
    n_samples: int
    ell: np.ndarray
    d_hole: np.ndarray
    d_hole_err: np.ndarray
    d_tooth: np.ndarray
    d_tooth_err: np.ndarray
    d_tooth_odd: float
    d_tooth_odd_err: float
    d_tooth_even: float
    d_tooth_even_err: float
    hole_fraction: float
    covered: float = field(default=0.0)


def string_density_stats(p, n_sites, n_samples, seed, max_len=None) -> StringDensities:
    """Run densities per unit length over an ensemble of periodic combs."""
    _check_p(p)
    if max_len is None:
        max_len = max(1, n_sites - 2)
    ell = np.arange(1, max_len + 1)
    dh = np.zeros((n_samples, max_len))
    dt = np.zeros((n_samples, max_len))
    odd = np.zeros(n_samples)
    even = np.zeros(n_samples)
    holes = np.zeros(n_samples)
    covered = np.zeros(n_samples)
    for i, comb in enumerate(sample_ensemble(p, n_sites, "periodic", seed, n_samples)):
        runs = run_lengths(comb)
        L = comb.length
        for r in runs.hole_runs:
            if r <= max_len:
                dh[i, r - 1] += 1.0 / L
        for r in runs.tooth_runs:
            if r <= max_len:
                dt[i, r - 1] += 1.0 / L
        odd[i] = runs.n_t_odd / L
        even[i] = runs.n_t_even / L
        holes[i] = comb.n_holes / L
        covered[i] = (ell * (dh[i] + dt[i])).sum()

    def m(x):
        return x.mean(axis=0), x.std(axis=0, ddof=1) / np.sqrt(n_samples) if n_samples > 1 else 0 * x.mean(axis=0)

    (mh, eh), (mt, et), (mo, eo), (me, ee) = m(dh), m(dt), m(odd), m(even)
    return StringDensities(p, n_sites, n_samples, ell, mh, eh, mt, et, float(mo), float(eo),
                           float(me), float(ee), float(holes.mean()), float(covered.mean()))
