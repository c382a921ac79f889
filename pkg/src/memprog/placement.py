"""Page-aware slab allocator over the MAGE-virtual address space.

Every page holds slots of exactly one size, so an allocation never
straddles a page boundary.  Among pages of a size class with free slots,
the fullest one is chosen; this gives pages a chance to die completely
when the number of live variables shrinks.  A page whose slots are all
free is retired and its page number is never handed out again.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field


class AllocatorError(Exception):
    pass


class OversizeAllocationError(AllocatorError):
    pass


@dataclass
class _Page:
    number: int
    slot_size: int
    n_slots: int
    free_bits: int  # bit i set <=> slot i free
    free: int


@dataclass
class AllocatorStats:
    pages_ever_allocated: int = 0
    live_pages: int = 0
    peak_live_pages: int = 0
    live_units: int = 0
    peak_live_units: int = 0
    live_allocations: int = 0
    total_allocations: int = 0
    # leftover units at the end of pages that no slot can use
    classic_fragmentation_ratio: float = 0.0
    # share of live page capacity not holding live data, sampled at the page peak
    effective_fragmentation_ratio: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class _SizeClass:
    slot_size: int
    pages: dict[int, _Page] = field(default_factory=dict)
    heap: list[tuple[int, int]] = field(default_factory=list)


class SlabAllocator:
    def __init__(self, page_shift: int):
        self.page_shift = page_shift
        self.page_size = 1 << page_shift
        self._classes: dict[int, _SizeClass] = {}
        self._owner: dict[int, _Page] = {}  # page number -> page (live pages only)
        self._next_page = 0
        self._leftover_units = 0
        self.stats = AllocatorStats()

    # -- public API ---------------------------------------------------------

    def allocate(self, size: int) -> int:
        if size < 1:
            raise AllocatorError(f"allocation size must be positive, got {size}")
        if size > self.page_size:
            raise OversizeAllocationError(
                f"allocation of {size} units exceeds the page size {self.page_size}"
            )
        sc = self._classes.get(size)
        if sc is None:
            sc = self._classes[size] = _SizeClass(size)
        page = self._pick_candidate(sc)
        if page is None:
            page = self._open_page(sc)
        slot = (page.free_bits & -page.free_bits).bit_length() - 1
        page.free_bits &= ~(1 << slot)
        page.free -= 1
        if page.free:
            heapq.heappush(sc.heap, (page.free, page.number))

        st = self.stats
        st.live_allocations += 1
        st.total_allocations += 1
        st.live_units += size
        st.peak_live_units = max(st.peak_live_units, st.live_units)
        return (page.number << self.page_shift) + slot * size

    def deallocate(self, addr: int) -> None:
        pn = addr >> self.page_shift
        page = self._owner.get(pn)
        if page is None:
            raise AllocatorError(f"deallocate of unknown address {addr:#x}")
        offset = addr & (self.page_size - 1)
        slot, rem = divmod(offset, page.slot_size)
        if rem or slot >= page.n_slots:
            raise AllocatorError(f"address {addr:#x} is not a slot boundary")
        bit = 1 << slot
        if page.free_bits & bit:
            raise AllocatorError(f"double free of address {addr:#x}")
        page.free_bits |= bit
        page.free += 1

        st = self.stats
        st.live_allocations -= 1
        st.live_units -= page.slot_size
        sc = self._classes[page.slot_size]
        if page.free == page.n_slots:
            self._retire(sc, page)
        else:
            heapq.heappush(sc.heap, (page.free, page.number))

    def page_of(self, addr: int) -> int:
        return addr >> self.page_shift

    def candidate_pages(self, size: int) -> dict[int, int]:
        """Page number -> free-slot count for pages of this size class with space."""
        sc = self._classes.get(size)
        if sc is None:
            return {}
        return {p.number: p.free for p in sc.pages.values() if p.free > 0}

    @property
    def live_page_numbers(self) -> list[int]:
        return sorted(self._owner)

    # -- internals ----------------------------------------------------------

    def _pick_candidate(self, sc: _SizeClass) -> _Page | None:
        heap = sc.heap
        while heap:
            free, pn = heap[0]
            page = sc.pages.get(pn)
            if page is None or page.free != free or free == 0:
                heapq.heappop(heap)
                continue
            return page
        return None

    def _open_page(self, sc: _SizeClass) -> _Page:
        n_slots = self.page_size // sc.slot_size
        page = _Page(self._next_page, sc.slot_size, n_slots, (1 << n_slots) - 1, n_slots)
        self._next_page += 1
        sc.pages[page.number] = page
        self._owner[page.number] = page
        self._leftover_units += self.page_size - n_slots * sc.slot_size

        st = self.stats
        st.pages_ever_allocated += 1
        st.live_pages += 1
        if st.live_pages > st.peak_live_pages:
            st.peak_live_pages = st.live_pages
            # the new page's first slot is about to be taken
            used = st.live_units + sc.slot_size
            st.effective_fragmentation_ratio = 1.0 - used / (st.live_pages * self.page_size)
        st.classic_fragmentation_ratio = self._leftover_units / (st.pages_ever_allocated * self.page_size)
        return page

    def _retire(self, sc: _SizeClass, page: _Page) -> None:
        del sc.pages[page.number]
        del self._owner[page.number]
        self.stats.live_pages -= 1
        if len(sc.heap) > 4 * len(sc.pages) + 16:
            sc.heap = [(p.free, p.number) for p in sc.pages.values() if p.free]
            heapq.heapify(sc.heap)
