"""Per-node 6LoWPAN stack: traffic, static routing, and forwarding strategies.

Strategies:

- HWR: every forwarder reassembles the whole datagram, then re-fragments it
  toward the next hop under a fresh tag (fill_first fragmentation).
- FF: fragments pass one by one through a virtual reassembly buffer entry
  created when the first fragment arrives in order; fragments that find no
  entry fall back to HWR-style reassembly for that datagram (FF nodes
  fragment minimal_first).
- FF_QUEUED: like FF, but rewritten fragments wait in the entry's queue and
  leave as one in-order burst once the whole datagram has passed.

The sink always reassembles.  Each received frame costs a fixed processing
delay before the stack acts on it.  Every datagram-losing event is reported
through on_drop with a cause, so a harness can attribute each datagram's
fate to the first thing that went wrong.
"""

import hashlib
from dataclasses import dataclass
from functools import partial

from .buffers import (DatagramKey, FragmentationBuffer, PacketArena,
                      ReassemblyBuffer)
from .frag_codec import (CompressionHeader, Frag1Header, FragNHeader,
                         Fragment, fragment_datagram, refragment_first)
from .link_mac import MAX_FRAME_BYTES, Frame, Mac
from .metrics import NodeCounters
from .vrb import TagAllocator, VrbTable

HEADER_BYTES = 48    # 40-byte IPv6 header region + 8-byte UDP header

ROLES = ("source", "forwarder", "sink")
STRATEGIES = ("HWR", "FF", "FF_QUEUED")


def build_datagram(src, dgram_id, payload_size):
    """Deterministic datagram bytes, so the sink can verify integrity."""
    n = HEADER_BYTES + payload_size
    out = bytearray()
    block = 0
    while len(out) < n:
        out += hashlib.sha256(b"%d:%d:%d" % (src, dgram_id, block)).digest()
        block += 1
    return bytes(out[:n])


@dataclass(frozen=True, slots=True)
class NodeConfig:
    id: int
    role: str
    route_next_hop: object          # None only at the sink
    strategy: str
    rbuf_entries: object = 16       # None = unbounded
    vrb_entries: object = 16

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError("unknown role: %r" % (self.role,))
        if self.strategy not in STRATEGIES:
            raise ValueError("unknown strategy: %r" % (self.strategy,))
        if (self.role == "sink") != (self.route_next_hop is None):
            raise ValueError("exactly the sink runs without a next hop")


@dataclass(frozen=True, slots=True)
class StackParams:
    comp_header_bytes: int = 24
    reassembly_timeout_us: int = 10_000_000
    vrb_lifetime_us: int = 10_000_000
    proc_delay_us: int = 2000
    frag_buffer_slots: object = 64     # concurrent fragmentation jobs
    arena_bytes: object = 6144         # shared packet pool; None = unbounded


class _FragJob:
    """One local fragmentation; holds its tag until all frames left the MAC."""

    __slots__ = ("dgram_id", "next_hop", "tag", "remaining")

    def __init__(self, dgram_id, next_hop):
        self.dgram_id = dgram_id
        self.next_hop = next_hop
        self.tag = None
        self.remaining = 0


class Node:
    """One network node: MAC, buffers, and the configured strategy."""

    def __init__(self, config, sim, medium, mac_params, stack=None,
                 on_datagram=None, on_drop=None):
        self.config = config
        self.sim = sim
        self.stack = stack or StackParams()
        self.on_datagram = on_datagram
        self.on_drop = on_drop
        self.counters = NodeCounters()
        self.arena = PacketArena(self.stack.arena_bytes)
        self.mac = Mac(config.id, sim, medium, mac_params, self.counters,
                       arena=self.arena, on_deliver=self._on_deliver,
                       on_frame_done=self._on_frame_done)
        self.sdu = MAX_FRAME_BYTES - mac_params.l2_overhead
        self.comp = CompressionHeader(self.stack.comp_header_bytes)
        self.policy = ("fill_first" if config.strategy == "HWR"
                       else "minimal_first")
        self.tags = TagAllocator()
        self.rbuf = ReassemblyBuffer(config.rbuf_entries,
                                     self.stack.reassembly_timeout_us,
                                     self.counters, arena=self.arena,
                                     on_drop=self._note_drop)
        self.vrb = VrbTable(config.vrb_entries, self.stack.vrb_lifetime_us,
                            self.counters, self.tags,
                            on_drop=self._note_drop, arena=self.arena)
        self.frag_buf = FragmentationBuffer(self.stack.frag_buffer_slots)
        self._rbuf_timer_at = None
        self._vrb_timer_at = None

    # -- sending --------------------------------------------------------

    def app_send(self, payload_size, dgram_id):
        """Emit one application datagram toward the sink."""
        self.counters.datagrams_sent += 1
        datagram = build_datagram(self.config.id, dgram_id, payload_size)
        return self._send_fragments(datagram, dgram_id)

    def _send_fragments(self, datagram, dgram_id):
        now = self.sim.now
        next_hop = self.config.route_next_hop
        job = _FragJob(dgram_id, next_hop)
        if not self.frag_buf.acquire(job):
            self.counters.frag_buf_full += 1
            self._note_drop(dgram_id, "frag_buf_full", now)
            return False
        job.tag = self.tags.acquire(next_hop)
        frags = fragment_datagram(datagram, self.comp, job.tag, self.sdu,
                                  self.policy)
        job.remaining = len(frags)
        me = self.config.id
        for frag in frags:
            self.mac.send(Frame(me, next_hop, frag, dgram_id, job))
        return True

    def _on_frame_done(self, frame, ok, cause):
        if not ok:
            self._note_drop(frame.dgram_id, cause, self.sim.now)
        job = frame.job
        if job is not None:
            job.remaining -= 1
            if job.remaining == 0:
                self.frag_buf.release(job)
                self.tags.release(job.next_hop, job.tag)

    def _note_drop(self, dgram_id, cause, now):
        if self.on_drop is not None:
            self.on_drop(dgram_id, cause, now)

    # -- receiving ------------------------------------------------------

    def _on_deliver(self, frame, now):
        self.sim.after(self.stack.proc_delay_us, partial(self._process, frame))

    def _process(self, frame):
        now = self.sim.now
        frag = frame.fragment
        header = frag.header
        if header is None:
            if self.config.role == "sink":
                self._deliver_up(frame.dgram_id, frag.payload, now)
            else:
                self.counters.datagrams_forwarded += 1
                self.mac.send(Frame(self.config.id,
                                    self.config.route_next_hop,
                                    frag, frame.dgram_id, None))
            return
        key = DatagramKey(frame.src, frame.dst, header.datagram_size,
                          header.datagram_tag)
        if self.config.role == "sink" or self.config.strategy == "HWR":
            self._reassemble_step(key, frag, frame.dgram_id, now)
        elif isinstance(header, Frag1Header):
            self._ff_first(key, frag, frame.dgram_id, now)
        else:
            self._ff_rest(key, frag, frame.dgram_id, now)

    def _deliver_up(self, dgram_id, datagram, now):
        self.counters.datagrams_delivered += 1
        if self.on_datagram is not None:
            self.on_datagram(dgram_id, bytes(datagram), now)

    def _reassemble_step(self, key, frag, dgram_id, now):
        status, value = self.rbuf.insert(key, frag.offset, frag.payload, now,
                                         dgram_id)
        if status == "completed":
            if self.config.role == "sink":
                self._deliver_up(dgram_id, value, now)
            else:
                self.counters.datagrams_forwarded += 1
                self._send_fragments(value, dgram_id)
        elif status == "stored":
            self._arm_rbuf_timer()

    # -- fragment forwarding ---------------------------------------------

    def _ff_first(self, key, frag, dgram_id, now):
        if key in self.rbuf.entries:     # already fell back for this datagram
            self._reassemble_step(key, frag, dgram_id, now)
            return
        if self.vrb.lookup(key, now) is not None:
            self.counters.duplicate_fragments += 1
            return
        entry = self.vrb.create(key, self.config.route_next_hop, now,
                                dgram_id)
        if entry is None:                # table full: reassemble instead
            self._reassemble_step(key, frag, dgram_id, now)
            return
        self._arm_vrb_timer()
        entry.covered_bytes = len(frag.payload)
        outs = []
        for out in refragment_first(frag, self.comp, self.sdu):
            h = out.header
            if isinstance(h, Frag1Header):
                h = Frag1Header(h.datagram_size, entry.out_tag)
            else:
                h = FragNHeader(h.datagram_size, entry.out_tag,
                                h.offset_units)
            outs.append(Fragment(h, out.payload, out.comp_size))
        if self.config.strategy == "FF":
            self.counters.datagrams_forwarded += 1
        self._vrb_emit(entry, outs, dgram_id, now)

    def _ff_rest(self, key, frag, dgram_id, now):
        entry = self.vrb.lookup(key, now)
        if entry is None:                # first fragment missing or unordered
            self._reassemble_step(key, frag, dgram_id, now)
            return
        header = frag.header
        out = Fragment(FragNHeader(header.datagram_size, entry.out_tag,
                                   header.offset_units), frag.payload)
        entry.covered_bytes += len(frag.payload)
        if self._vrb_emit(entry, [out], dgram_id, now):
            if entry.covered_bytes >= key.datagram_size:
                self._vrb_flush(entry)

    def _vrb_emit(self, entry, frags, dgram_id, now):
        """Send right away (FF) or park in the entry queue (FF_QUEUED)."""
        me = self.config.id
        frames = [Frame(me, entry.next_hop, f, dgram_id, None) for f in frags]
        if self.config.strategy == "FF":
            for fr in frames:
                self.mac.send(fr)
            return True
        for fr in frames:
            wire = self.mac.wire_size(fr)
            if not self.arena.alloc(wire):
                self.counters.pktbuf_full += 1
                self.vrb.remove(entry.key)   # frees queued charge and tag
                self._note_drop(dgram_id, "pktbuf_full", now)
                return False
            entry.queued.append(fr)
            entry.queued_wire_bytes += wire
        return True

    def _vrb_flush(self, entry):
        """The datagram has fully passed; release (and drain) the entry."""
        frames = entry.queued
        entry.queued = []
        entry.queued_wire_bytes = 0
        self.vrb.remove(entry.key)
        if frames:
            self.counters.datagrams_forwarded += 1
            for fr in frames:
                self.arena.free(self.mac.wire_size(fr))   # MAC re-charges
                self.mac.send(fr)

    # -- buffer expiry ----------------------------------------------------

    def _arm_rbuf_timer(self):
        deadline = self.rbuf.next_deadline()
        if deadline is None:
            return
        t = deadline + 1                 # expiry is strictly past-deadline
        if self._rbuf_timer_at is not None and self._rbuf_timer_at <= t:
            return
        self._rbuf_timer_at = t
        self.sim.at(t, self._rbuf_timer_fire)

    def _rbuf_timer_fire(self):
        self._rbuf_timer_at = None
        self.rbuf.expire_due(self.sim.now)
        self._arm_rbuf_timer()

    def _arm_vrb_timer(self):
        deadline = self.vrb.next_deadline()
        if deadline is None:
            return
        t = deadline + 1
        if self._vrb_timer_at is not None and self._vrb_timer_at <= t:
            return
        self._vrb_timer_at = t
        self.sim.at(t, self._vrb_timer_fire)

    def _vrb_timer_fire(self):
        self._vrb_timer_at = None
        self.vrb.expire_due(self.sim.now)
        self._arm_vrb_timer()
