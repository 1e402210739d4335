"""External-memory tier: link buffers and chain buffers with per-entry cutoffs.

Both buffer tiers age at the external coherence time and store, per entry,
the cutoff computed at push time from the entry's fidelity and the tier's
fidelity floor.  Link buffers hold delivered elementary pairs against the
full n-link budget (tier m = n); chain buffers hold partial chains against
the application floor only (tier m = 1).

A buffer is a single-owner mutable object; one trial's buffers all live on
one logical thread.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .physics import cutoff_from_floor, f_req

LINK_TIER = "link"
CHAIN_TIER = "chain"

PUSH_ACCEPTED = "accepted"
PUSH_REJECTED_FLOOR = "rejected_floor"
PUSH_EVICTED_OLDEST = "evicted_oldest"

DEFAULT_CAPACITY = 20


@dataclass
class WernerPairEntry:
    """A delivered link-level pair: fidelity, delivery time, stored cutoff."""

    F_del: float
    t_del: float
    t_cut: float = 0.0

    def freshness(self):
        return self.t_del

    def age_reference(self):
        return self.t_del


@dataclass
class ChainEntry:
    """A partial chain: swap-time and oldest-contributor references.

    t_sw anchors further decoherence (the chain absorbed the swap's noise at
    that moment); t_old anchors cutoff expiry.  `dwell` accumulates chain
    buffer residence each time the entry is popped, for the storage
    diagnostic; `pushed_at` is the residence reference for the current stay.
    """

    F_ch: float
    t_sw: float
    t_old: float
    t_cut: float = 0.0
    dwell: float = 0.0
    pushed_at: float = 0.0

    def freshness(self):
        return self.t_old

    def age_reference(self):
        return self.t_old


@dataclass
class Buffer:
    """Bounded freshest-first buffer for one tier of the external memory.

    Entries are kept in insertion order (link-tier pushes arrive in
    non-decreasing delivery-time order, so insertion order is age order
    there).  Capacity overflow evicts the stalest entry.
    """

    tier: str
    n_links: int
    Tc_ext: float
    capacity: int = DEFAULT_CAPACITY
    F_min: float = 0.81
    entries: list = field(default_factory=list)

    def __post_init__(self):
        if self.tier not in (LINK_TIER, CHAIN_TIER):
            raise ValueError(f"unknown buffer tier {self.tier!r}")
        m = self.n_links if self.tier == LINK_TIER else 1
        self.floor = f_req(m, self.F_min)

    def __len__(self):
        return len(self.entries)

    def compute_cutoff(self, F):
        return cutoff_from_floor(F, self.floor, self.Tc_ext)

    def push(self, entry, now):
        """Insert an entry, computing its cutoff against the tier floor.

        Returns one of the push outcome tags.  Entries already at or below
        the floor (cutoff <= 0) are rejected rather than buffered; a full
        buffer evicts its stalest entry first.
        """
        t_cut = self.compute_cutoff(entry.F_ch if isinstance(entry, ChainEntry) else entry.F_del)
        if t_cut <= 0.0:
            return PUSH_REJECTED_FLOOR
        entry.t_cut = t_cut
        if isinstance(entry, ChainEntry):
            entry.pushed_at = now
        outcome = PUSH_ACCEPTED
        if len(self.entries) >= self.capacity:
            del self.entries[self._stalest_index()]
            outcome = PUSH_EVICTED_OLDEST
        self.entries.append(entry)
        return outcome

    def repush(self, entry, now):
        """Restore a just-popped chain entry with its key fields unchanged.

        Used by the sequential controller when the partner link pair turned
        out to be expired.  Residence restarts now; the dwell accrued at the
        pop is kept, so total residence is unchanged.
        """
        entry.pushed_at = now
        self.entries.append(entry)

    def pop_freshest(self, now=None):
        """Remove and return the freshest entry, or None if empty.

        Link tier: most recently pushed (equivalently, largest delivery
        time).  Chain tier: largest t_old, ties broken by larger t_sw and
        then by later insertion; popping also accrues buffer residence onto
        the entry's dwell diagnostic.
        """
        if not self.entries:
            return None
        if self.tier == LINK_TIER:
            return self.entries.pop()
        best = 0
        for i in range(1, len(self.entries)):
            e, b = self.entries[i], self.entries[best]
            if e.t_old > b.t_old or (e.t_old == b.t_old and e.t_sw >= b.t_sw):
                best = i
        entry = self.entries.pop(best)
        if now is not None:
            entry.dwell += now - entry.pushed_at
        return entry

    def _stalest_index(self):
        worst = 0
        if self.tier == LINK_TIER:
            return worst  # insertion order is age order
        for i in range(1, len(self.entries)):
            e, b = self.entries[i], self.entries[worst]
            if e.t_old < b.t_old or (e.t_old == b.t_old and e.t_sw < b.t_sw):
                worst = i
        return worst

    def discard_expired(self, now):
        """Drop every entry whose age strictly exceeds its stored cutoff.

        Age is measured from t_del (link tier) or t_old (chain tier).
        Returns the number of entries removed.
        """
        kept = [e for e in self.entries if now - e.age_reference() <= e.t_cut]
        dropped = len(self.entries) - len(kept)
        self.entries = kept
        return dropped
