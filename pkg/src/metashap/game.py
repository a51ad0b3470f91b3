"""Finite cooperative games and exact Shapley values.

Coalitions are stored as bitmasks over the ordered player list: bit ``i`` set
means player ``i`` belongs to the coalition.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from metashap.errors import DomainError, FormatError

MAX_PLAYERS = 12


@dataclass(frozen=True)
class CooperativeGame:
    players: tuple
    payoffs: tuple  # indexed by coalition bitmask, len == 2**n

    def __post_init__(self):
        players = tuple(self.players)
        payoffs = tuple(float(v) for v in self.payoffs)
        object.__setattr__(self, "players", players)
        object.__setattr__(self, "payoffs", payoffs)
        n = len(players)
        if n > MAX_PLAYERS:
            raise DomainError(f"at most {MAX_PLAYERS} players are supported, got {n}")
        if len(set(players)) != n:
            raise DomainError(f"player identifiers must be unique: {players!r}")
        if len(payoffs) != 2**n:
            raise DomainError(f"expected {2**n} coalition payoffs, got {len(payoffs)}")
        if payoffs[0] != 0.0:
            raise DomainError(f"the empty coalition must be worth 0, got {payoffs[0]}")

    @classmethod
    def from_mapping(cls, players, values):
        """Build from ``{coalition: payoff}`` where coalitions are iterables of players.

        The empty coalition may be omitted; every other coalition is required.
        """
        players = tuple(players)
        index = {p: i for i, p in enumerate(players)}
        payoffs = [None] * (2 ** len(players))
        payoffs[0] = 0.0
        for members, value in values.items():
            mask = 0
            for m in members:
                if m not in index:
                    raise FormatError(f"unknown player {m!r} in coalition {tuple(members)!r}")
                mask |= 1 << index[m]
            payoffs[mask] = float(value)
        missing = [m for m, v in enumerate(payoffs) if v is None]
        if missing:
            names = [cls._members_of(players, m) for m in missing]
            raise FormatError(f"missing coalition payoffs for {names!r}")
        return cls(players, payoffs)

    @staticmethod
    def _members_of(players, mask):
        return tuple(p for i, p in enumerate(players) if mask >> i & 1)

    @property
    def n(self):
        return len(self.players)

    @property
    def grand(self):
        return (1 << self.n) - 1

    def members(self, mask):
        return self._members_of(self.players, mask)

    def mask_of(self, members):
        index = {p: i for i, p in enumerate(self.players)}
        mask = 0
        for m in members:
            mask |= 1 << index[m]
        return mask

    def value(self, members):
        return self.payoffs[self.mask_of(members)]

    def as_mapping(self):
        return {self.members(m): v for m, v in enumerate(self.payoffs)}

    def scaled(self, factor):
        return CooperativeGame(self.players, [factor * v for v in self.payoffs])

    def combine(self, other, alpha=1.0, beta=1.0):
        """The game alpha * self + beta * other (same players)."""
        if other.players != self.players:
            raise DomainError("games must share the same player list")
        return CooperativeGame(
            self.players, [alpha * a + beta * b for a, b in zip(self.payoffs, other.payoffs)]
        )

    def to_dict(self):
        return {
            "players": list(self.players),
            "coalitions": [
                {"members": list(self.members(m)), "value": v} for m, v in enumerate(self.payoffs)
            ],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            players = data["players"]
            entries = data["coalitions"]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"game JSON needs 'players' and 'coalitions': {exc}") from None
        values = {}
        for entry in entries:
            try:
                members = tuple(entry["members"])
                value = float(entry["value"])
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"bad coalition entry {entry!r}: {exc}") from None
            key = frozenset(members)
            if len(key) != len(members) or key in {frozenset(k) for k in values}:
                raise FormatError(f"duplicate coalition or member in {entry!r}")
            values[members] = value
        if values.get(()) not in (None, 0.0):
            raise FormatError("the empty coalition must be worth 0")
        return cls.from_mapping(players, values)


def save_game(path, game):
    Path(path).write_text(json.dumps(game.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_game(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}", line=exc.lineno) from None
    return CooperativeGame.from_dict(data)


@dataclass(frozen=True)
class ShapleyResult:
    players: tuple
    values: tuple
    tie_tol: float = 1e-9

    @property
    def total(self):
        return math.fsum(self.values)

    @property
    def dominance_pct(self):
        total = self.total
        if total <= 0:
            return None
        return tuple(100.0 * v / total for v in self.values)

    @property
    def ranking(self):
        """Players grouped into tiers of (relatively) equal value, best first."""
        order = sorted(range(len(self.values)), key=lambda i: (-self.values[i], i))
        tiers = []
        for i in order:
            if tiers and _close(self.values[tiers[-1][0]], self.values[i], self.tie_tol):
                tiers[-1].append(i)
            else:
                tiers.append([i])
        return tuple(tuple(self.players[i] for i in tier) for tier in tiers)

    def value_of(self, player):
        return self.values[self.players.index(player)]

    def to_dict(self):
        pct = self.dominance_pct
        return {
            "players": list(self.players),
            "shapley": list(self.values),
            "total": self.total,
            "dominance_pct": None if pct is None else list(pct),
            "ranking": [list(t) for t in self.ranking],
            "dominance": dominance(self).to_json(),
        }


def _close(a, b, tol):
    scale = max(abs(a), abs(b))
    return abs(a - b) <= tol * scale


def _subset_weights(n):
    # weight of a coalition of size s that excludes the player: s!(n-s-1)!/n!
    return [math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)]


def shapley_subset(game):
    """Shapley values by the subset-weighted closed form."""
    n = game.n
    if n == 0:
        raise DomainError("a game needs at least one player")
    weights = _subset_weights(n)
    v = game.payoffs
    values = []
    for i in range(n):
        bit = 1 << i
        terms = [
            weights[bin(mask).count("1")] * (v[mask | bit] - v[mask])
            for mask in range(1 << n)
            if not mask & bit
        ]
        values.append(math.fsum(terms))
    return values


def shapley_permutations(game):
    """Shapley values by averaging marginal contributions over all orderings."""
    n = game.n
    if n == 0:
        raise DomainError("a game needs at least one player")
    totals = [[] for _ in range(n)]
    v = game.payoffs
    for order in itertools.permutations(range(n)):
        mask = 0
        for i in order:
            totals[i].append(v[mask | 1 << i] - v[mask])
            mask |= 1 << i
    count = math.factorial(n)
    return [math.fsum(t) / count for t in totals]


def shapley_values(game, tie_tol=1e-9):
    return ShapleyResult(game.players, tuple(shapley_subset(game)), tie_tol)


def is_superadditive(game):
    """Check v(A | B) >= v(A) + v(B) over all disjoint non-empty A, B.

    Returns ``(ok, violations)`` with violations as (A, B) member tuples; each
    unordered pair is reported once.
    """
    v = game.payoffs
    violations = []
    for a in range(1, 1 << game.n):
        rest = game.grand & ~a
        b = rest
        while b:
            if a < b and v[a | b] < v[a] + v[b]:
                violations.append((game.members(a), game.members(b)))
            b = (b - 1) & rest
    return not violations, violations


def monotone_modify(game):
    """Replace every payoff by the best payoff among its sub-coalitions.

    v'(S) = max over T subset of S of v(T). For a pair this is the rule
    "take the larger of the two singletons when the pair does worse".
    """
    v = list(game.payoffs)
    n = game.n
    # superset-max transform, one player dimension at a time
    for i in range(n):
        bit = 1 << i
        for mask in range(1 << n):
            if mask & bit:
                v[mask] = max(v[mask], v[mask ^ bit])
    return CooperativeGame(game.players, v)


def is_monotone(game):
    v = game.payoffs
    return all(
        v[mask] >= v[mask & ~(1 << i)] for mask in range(1 << game.n) for i in range(game.n)
    )


@dataclass(frozen=True)
class Dominance:
    """Outcome of ranking a Shapley result: one winner, a tie, or nothing."""

    members: tuple = ()

    @property
    def kind(self):
        if not self.members:
            return "none"
        return "dominant" if len(self.members) == 1 else "tie"

    def to_json(self):
        return {"kind": self.kind, "members": list(self.members)}


def dominance(result):
    if result.total <= 0 or all(v <= 0 for v in result.values):
        return Dominance(())
    return Dominance(tuple(result.ranking[0]))


# Games from the three-student report-writing walkthrough.
REPORT_WRITING = CooperativeGame.from_mapping(
    "ABC",
    {"A": 20, "B": 27, "C": 35, "AB": 55, "AC": 62, "BC": 74, "ABC": 100},
)
NON_SUPERADDITIVE = CooperativeGame.from_mapping(
    "ABC",
    {"A": 20, "B": 27, "C": 35, "AB": 10, "AC": 17, "BC": 74, "ABC": 70},
)
TWO_PLAYER = CooperativeGame.from_mapping("BC", {"B": 27, "C": 35, "BC": 74})

DEMO_GAMES = {
    "report-writing": REPORT_WRITING,
    "non-superadditive": NON_SUPERADDITIVE,
    "two-player": TWO_PLAYER,
}


def random_game(rng, n, low=-100.0, high=100.0):
    payoffs = np.concatenate([[0.0], rng.uniform(low, high, size=2**n - 1)])
    return CooperativeGame(tuple(range(n)), payoffs)
