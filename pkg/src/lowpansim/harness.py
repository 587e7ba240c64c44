"""Scenario files, experiment execution, metrics output, aggregation.

A scenario is a JSON document naming a topology file, a forwarding
strategy, payload sizes, the send interval, and explicit seeds. Each
(seed, payload) pair is simulated independently; one delimited text
file per seed collects every payload section, and an aggregate JSON
folds the run files into summary series. Reruns are byte identical.
"""

import hashlib
import json
import math
import statistics
from collections import Counter
from dataclasses import dataclass, fields, replace
from functools import partial
from pathlib import Path

from .buffers import DatagramKey  # noqa: F401  (re-export convenience)
from .frag_codec import CompressionHeader, fragment_count
from .link_mac import MacParams
from .metrics import COUNTER_FIELDS
from .node_stack import (HEADER_BYTES, STRATEGIES, Node, NodeConfig,
                         StackParams, build_datagram)
from .sim_core import Medium, Simulator
from .topology import load_topology

# UDP payload bytes -> fragment count for the default frame model.
FRAG_COUNT_TABLE = (
    (16, 1), (80, 2), (176, 3), (272, 4), (368, 5), (464, 6), (560, 7),
    (656, 8), (752, 9), (848, 10), (944, 11), (1040, 12), (1136, 13),
    (1232, 14),
)
STUDY_PAYLOADS = tuple(p for p, _ in FRAG_COUNT_TABLE)

UNBOUNDED_ENTRIES = 1 << 30      # stands in for "no limit" table sizes

_SCENARIO_KEYS = {
    "version", "topology", "strategy", "payloads", "interval_us",
    "packets_per_source", "seeds", "rbuf_entries", "sink_rbuf_entries",
    "vrb_entries", "force_link_pdr", "check_paths", "serialize_sends",
    "mac", "stack",
}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Scenario:
    topology: str
    strategy: str
    payloads: tuple
    interval_us: tuple
    seeds: tuple
    packets_per_source: int = 100
    rbuf_entries: int = 1            # per node; the sink gets its own size
    sink_rbuf_entries: int = 16
    vrb_entries: int = 16
    force_link_pdr: object = None
    check_paths: bool = True
    # One send at a time network-wide instead of concurrent per-source
    # schedules.  With intervals longer than a train's transit time this
    # removes channel contention entirely, which is what the lossless
    # conservation oracle needs: hidden senders on a loss-free channel can
    # otherwise phase-lock and collide indefinitely.
    serialize_sends: bool = False
    mac: MacParams = MacParams()
    stack: StackParams = StackParams()
    base_dir: Path = Path(".")

    def topology_path(self):
        return self.base_dir / self.topology


def _build_params(cls, over, what):
    allowed = {f.name for f in fields(cls)}
    bad = set(over) - allowed
    if bad:
        raise ScenarioError("unknown %s parameter(s): %s"
                            % (what, ", ".join(sorted(bad))))
    return replace(cls(), **over)


def _entries(value, what):
    if value is None:
        return UNBOUNDED_ENTRIES
    if not isinstance(value, int) or value < 1:
        raise ScenarioError("%s must be a positive integer or null" % what)
    return value


def scenario_from_dict(cfg, base_dir=Path(".")):
    if not isinstance(cfg, dict):
        raise ScenarioError("scenario must be a JSON object")
    unknown = set(cfg) - _SCENARIO_KEYS
    if unknown:
        raise ScenarioError("unknown scenario key(s): %s"
                            % ", ".join(sorted(unknown)))
    if cfg.get("version") != 1:
        raise ScenarioError("unsupported scenario version %r"
                            % cfg.get("version"))
    for key in ("topology", "strategy", "payloads", "interval_us", "seeds"):
        if key not in cfg:
            raise ScenarioError("scenario is missing %r" % key)

    strategy = cfg["strategy"]
    if strategy not in STRATEGIES:
        raise ScenarioError("unknown strategy %r" % strategy)

    payloads = tuple(cfg["payloads"])
    if not payloads:
        raise ScenarioError("payloads must not be empty")
    bad = [p for p in payloads if p not in STUDY_PAYLOADS]
    if bad:
        raise ScenarioError("payload(s) %s are not in the published set %s"
                            % (bad, list(STUDY_PAYLOADS)))

    interval = tuple(cfg["interval_us"])
    if (len(interval) != 2 or not all(isinstance(v, int) for v in interval)
            or not 0 < interval[0] <= interval[1]):
        raise ScenarioError("interval_us must be [lo, hi] with 0 < lo <= hi")

    seeds = tuple(cfg["seeds"])
    if not seeds or not all(isinstance(s, int) for s in seeds):
        raise ScenarioError("seeds must be a non-empty list of integers")

    packets = cfg.get("packets_per_source", 100)
    if not isinstance(packets, int) or packets < 1:
        raise ScenarioError("packets_per_source must be a positive integer")

    force = cfg.get("force_link_pdr")
    if force is not None and not 0.0 < float(force) <= 1.0:
        raise ScenarioError("force_link_pdr must be in (0, 1] or null")

    stack_over = dict(cfg.get("stack", {}))
    if stack_over.get("frag_buffer_slots", 0) is None:
        stack_over["frag_buffer_slots"] = UNBOUNDED_ENTRIES

    scenario = Scenario(
        topology=str(cfg["topology"]),
        strategy=strategy,
        payloads=payloads,
        interval_us=interval,
        seeds=seeds,
        packets_per_source=packets,
        rbuf_entries=_entries(cfg.get("rbuf_entries", 1), "rbuf_entries"),
        sink_rbuf_entries=_entries(cfg.get("sink_rbuf_entries", 16),
                                   "sink_rbuf_entries"),
        vrb_entries=_entries(cfg.get("vrb_entries", 16), "vrb_entries"),
        force_link_pdr=None if force is None else float(force),
        check_paths=bool(cfg.get("check_paths", True)),
        serialize_sends=bool(cfg.get("serialize_sends", False)),
        mac=_build_params(MacParams, cfg.get("mac", {}), "mac"),
        stack=_build_params(StackParams, stack_over, "stack"),
        base_dir=Path(base_dir),
    )
    if not scenario.topology_path().is_file():
        raise ScenarioError("topology file not found: %s"
                            % scenario.topology_path())
    return scenario


def load_scenario(path):
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except (OSError, ValueError) as err:
        raise ScenarioError("cannot read scenario %s: %s" % (path, err))
    return scenario_from_dict(cfg, base_dir=path.parent)


def _params_key(params):
    return json.dumps({f.name: getattr(params, f.name)
                       for f in fields(type(params))}, sort_keys=True)


def scenario_fingerprint(scenario, topology_bytes):
    ident = {
        "strategy": scenario.strategy,
        "payloads": list(scenario.payloads),
        "interval_us": list(scenario.interval_us),
        "packets_per_source": scenario.packets_per_source,
        "seeds": list(scenario.seeds),
        "rbuf_entries": scenario.rbuf_entries,
        "sink_rbuf_entries": scenario.sink_rbuf_entries,
        "vrb_entries": scenario.vrb_entries,
        "force_link_pdr": scenario.force_link_pdr,
        "check_paths": scenario.check_paths,
        "serialize_sends": scenario.serialize_sends,
        "mac": _params_key(scenario.mac),
        "stack": _params_key(scenario.stack),
        "topology_sha256": hashlib.sha256(topology_bytes).hexdigest(),
    }
    blob = json.dumps(ident, sort_keys=True).encode("ascii")
    return hashlib.sha256(blob).hexdigest()


def frag_table_check():
    """Recompute the payload -> fragment count mapping; report mismatches."""
    comp = CompressionHeader(StackParams().comp_header_bytes)
    sdu = 127 - MacParams().l2_overhead
    rows, mismatches = [], []
    for payload, expected in FRAG_COUNT_TABLE:
        size = payload + HEADER_BYTES
        minimal = fragment_count(size, comp, sdu, "minimal_first")
        fill = fragment_count(size, comp, sdu, "fill_first")
        rows.append((payload, minimal))
        if minimal != expected or fill != expected:
            mismatches.append(
                "payload %d: expected %d fragments, got %d (minimal) / %d "
                "(fill)" % (payload, expected, minimal, fill))
    return rows, mismatches


class _Rec:
    """Per-datagram bookkeeping for one payload simulation."""

    __slots__ = ("source", "sent_at", "delivered_at", "cause", "cause_at")

    def __init__(self, source):
        self.source = source
        self.sent_at = None
        self.delivered_at = None
        self.cause = None
        self.cause_at = None


class _PayloadRun:
    __slots__ = ("payload", "frag_count", "sent", "delivered", "latency",
                 "counters", "high_water", "causes", "violations")

    def __init__(self, payload, frag_count):
        self.payload = payload
        self.frag_count = frag_count
        self.sent = 0
        self.delivered = 0
        self.latency = []        # (hop_distance, latency_us, dgram_id)
        self.counters = {}       # node -> counter dict
        self.high_water = {}     # node -> arena high water
        self.causes = Counter()
        self.violations = []


def _path_edges(topo, source):
    edges = set()
    node = source
    while node != topo.sink:
        parent = topo.routes[node]
        edges.add((node, parent))
        node = parent
    return edges


def _tap_deliveries(mac, dst, edges):
    orig = mac.on_deliver

    def tap(frame, now):
        edges.setdefault(frame.dgram_id, set()).add((frame.src, dst))
        orig(frame, now)

    mac.on_deliver = tap


def _simulate(scenario, topo, seed, payload):
    """One independent simulation: every sender emits `packets` datagrams
    of one payload size; runs until the event queue drains."""
    sim = Simulator(seed=seed * 1000003 + payload)
    medium = Medium(sim)
    senders = set(topo.senders())
    policy = "fill_first" if scenario.strategy == "HWR" else "minimal_first"
    comp = CompressionHeader(scenario.stack.comp_header_bytes)
    sdu = 127 - scenario.mac.l2_overhead
    result = _PayloadRun(payload,
                         fragment_count(payload + HEADER_BYTES, comp, sdu,
                                        policy))
    recs = {}
    violations = result.violations

    def on_datagram(dgram_id, data, now):
        rec = recs.get(dgram_id)
        if rec is None:
            violations.append("delivery of unknown datagram %d" % dgram_id)
            return
        if rec.delivered_at is not None:
            violations.append("datagram %d delivered twice" % dgram_id)
            return
        if rec.cause is not None:
            violations.append("datagram %d delivered after loss cause %s"
                              % (dgram_id, rec.cause))
        if data != build_datagram(rec.source, dgram_id, payload):
            violations.append("datagram %d corrupted in transit" % dgram_id)
        rec.delivered_at = now

    def on_drop(dgram_id, cause, now):
        rec = recs.get(dgram_id)
        if rec is None:
            violations.append("drop (%s) of unknown datagram %d"
                              % (cause, dgram_id))
            return
        if rec.delivered_at is None and rec.cause is None:
            rec.cause = cause
            rec.cause_at = now

    nodes = {}
    for nid in topo.members:
        if nid == topo.sink:
            role, rbuf = "sink", scenario.sink_rbuf_entries
        else:
            role = "source" if nid in senders else "forwarder"
            rbuf = scenario.rbuf_entries
        cfg = NodeConfig(id=nid, role=role,
                         route_next_hop=topo.routes.get(nid),
                         strategy=scenario.strategy,
                         rbuf_entries=rbuf,
                         vrb_entries=scenario.vrb_entries)
        nodes[nid] = Node(cfg, sim, medium, scenario.mac,
                          stack=scenario.stack,
                          on_datagram=on_datagram if role == "sink" else None,
                          on_drop=on_drop)
    for (a, b), pdr in sorted(topo.links.items()):
        if scenario.force_link_pdr is not None:
            pdr = scenario.force_link_pdr
        medium.add_link(nodes[a].mac, nodes[b].mac, pdr)

    edges = {}
    if scenario.check_paths:
        for nid, node in nodes.items():
            _tap_deliveries(node.mac, nid, edges)

    def send(node, dgram_id):
        recs[dgram_id].sent_at = sim.now
        node.app_send(payload, dgram_id)

    lo, hi = scenario.interval_us
    next_id = 0
    if scenario.serialize_sends:
        # Round-robin, one datagram in flight at a time (given lo exceeds a
        # train's transit time).
        t = 0
        for _ in range(scenario.packets_per_source):
            for nid in sorted(senders):
                t += sim.rng.randint(lo, hi)
                next_id += 1
                recs[next_id] = _Rec(nid)
                sim.at(t, partial(send, nodes[nid], next_id))
    else:
        for nid in sorted(senders):
            t = 0
            for _ in range(scenario.packets_per_source):
                t += sim.rng.randint(lo, hi)
                next_id += 1
                recs[next_id] = _Rec(nid)
                sim.at(t, partial(send, nodes[nid], next_id))

    sim.run()

    result.sent = len(recs)
    for dgram_id in sorted(recs):
        rec = recs[dgram_id]
        if rec.delivered_at is not None:
            result.delivered += 1
            result.latency.append((topo.hop_distance[rec.source],
                                   rec.delivered_at - rec.sent_at, dgram_id))
        elif rec.cause is not None:
            result.causes[rec.cause] += 1
        else:
            violations.append("datagram %d neither delivered nor attributed"
                              % dgram_id)
    if result.sent != result.delivered + sum(result.causes.values()):
        violations.append("loss-cause conservation broken: %d != %d + %d"
                          % (result.sent, result.delivered,
                             sum(result.causes.values())))

    if scenario.check_paths:
        for dgram_id, used in sorted(edges.items()):
            rec = recs.get(dgram_id)
            if rec is None:
                violations.append("frames of unknown datagram %d" % dgram_id)
                continue
            stray = used - _path_edges(topo, rec.source)
            if stray:
                violations.append("datagram %d left its route: %s"
                                  % (dgram_id, sorted(stray)))

    for nid in topo.members:
        node = nodes[nid]
        result.counters[nid] = node.counters.as_dict()
        result.high_water[nid] = node.arena.high_water
        if node.arena.used != 0:
            violations.append("node %d arena holds %d bytes after drain"
                              % (nid, node.arena.used))
        if node.rbuf.live_entries or node.vrb.live_entries:
            violations.append("node %d still holds reassembly state" % nid)
        if node.frag_buf.live_slots or node.mac.queue or node.mac.current:
            violations.append("node %d still holds frames" % nid)
    return result


def run_one(scenario, topo, seed):
    return [_simulate(scenario, topo, seed, p) for p in scenario.payloads]


def _render_run(scenario, fingerprint, topo_sha, run_index, seed, results,
                hop_distance):
    out = ["metrics v1", "[scenario]"]
    kv = [
        ("fingerprint", fingerprint),
        ("topology", scenario.topology),
        ("topology_sha256", topo_sha),
        ("strategy", scenario.strategy),
        ("payloads", ",".join(map(str, scenario.payloads))),
        ("interval_us", "%d,%d" % scenario.interval_us),
        ("packets_per_source", scenario.packets_per_source),
        ("seeds", ",".join(map(str, scenario.seeds))),
        ("run_index", run_index),
        ("seed", seed),
        ("rbuf_entries", scenario.rbuf_entries),
        ("sink_rbuf_entries", scenario.sink_rbuf_entries),
        ("vrb_entries", scenario.vrb_entries),
        ("force_link_pdr", "none" if scenario.force_link_pdr is None
         else repr(scenario.force_link_pdr)),
        ("check_paths", str(scenario.check_paths).lower()),
        ("serialize_sends", str(scenario.serialize_sends).lower()),
        ("mac", _params_key(scenario.mac)),
        ("stack", _params_key(scenario.stack)),
    ]
    out += ["%s\t%s" % pair for pair in kv]

    out.append("[summary]")
    out.append("payload\tfrag_count\tsent\tdelivered\tpdr")
    for r in results:
        out.append("%d\t%d\t%d\t%d\t%r"
                   % (r.payload, r.frag_count, r.sent, r.delivered,
                      r.delivered / r.sent))

    out.append("[latency]")
    out.append("payload\tfrag_count\thop_distance\tlatency_us\tdgram_id")
    for r in results:
        for hops, lat, dgram_id in r.latency:
            out.append("%d\t%d\t%d\t%d\t%d"
                       % (r.payload, r.frag_count, hops, lat, dgram_id))

    out.append("[node_counters]")
    out.append("payload\tnode\thop_distance\t"
               + "\t".join(COUNTER_FIELDS) + "\tpktbuf_high_water")
    for r in results:
        for nid in sorted(r.counters):
            c = r.counters[nid]
            out.append("%d\t%d\t%d\t%s\t%d"
                       % (r.payload, nid, hop_distance[nid], "\t".join(
                           str(c[f]) for f in COUNTER_FIELDS),
                          r.high_water[nid]))

    out.append("[loss_causes]")
    out.append("payload\tcause\tcount")
    for r in results:
        for cause in sorted(r.causes):
            out.append("%d\t%s\t%d" % (r.payload, cause, r.causes[cause]))

    out.append("[invariants]")
    total = sum(len(r.violations) for r in results)
    out.append("violations\t%d" % total)
    for r in results:
        for v in r.violations:
            out.append("violation\t%d\t%s" % (r.payload, v))
    return "\n".join(out) + "\n"


def run_experiment(scenario, outdir):
    """Simulate every (seed, payload) pair; write one metrics file per
    seed plus aggregate.json. Returns the written paths."""
    topo = load_topology(scenario.topology_path())
    topo_bytes = scenario.topology_path().read_bytes()
    fingerprint = scenario_fingerprint(scenario, topo_bytes)
    topo_sha = hashlib.sha256(topo_bytes).hexdigest()
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for run_index, seed in enumerate(scenario.seeds):
        results = run_one(scenario, topo, seed)
        text = _render_run(scenario, fingerprint, topo_sha, run_index, seed,
                           results, topo.hop_distance)
        path = outdir / ("run-%02d.txt" % run_index)
        path.write_text(text)
        paths.append(path)
    agg = aggregate_runs(paths)
    agg_path = outdir / "aggregate.json"
    agg_path.write_text(json.dumps(agg, sort_keys=True, indent=1) + "\n")
    return paths + [agg_path]


def read_run_file(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "metrics v1":
        raise ScenarioError("%s: not a metrics file" % path)
    sections = {}
    name = None
    for line in lines[1:]:
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1]
            sections[name] = []
        elif name is not None and line:
            sections[name].append(line.split("\t"))
    meta = {row[0]: row[1] for row in sections.get("scenario", [])}
    tables = {}
    for sect in ("summary", "latency", "node_counters", "loss_causes"):
        rows = sections.get(sect, [])
        if rows:
            header = rows[0]
            tables[sect] = [dict(zip(header, r)) for r in rows[1:]]
        else:
            tables[sect] = []
    inv = sections.get("invariants", [])
    violations = [r for r in inv if r[0] == "violation"]
    return {"meta": meta, "tables": tables, "violations": violations}


def _percentile(samples, frac):
    ordered = sorted(samples)
    rank = max(0, math.ceil(frac * len(ordered)) - 1)
    return ordered[rank]


def _stats(samples):
    return {
        "count": len(samples),
        "mean_us": statistics.mean(samples),
        "median_us": statistics.median(samples),
        "p95_us": _percentile(samples, 0.95),
    }


def aggregate_runs(paths):
    """Fold run files for one scenario into summary series."""
    if not paths:
        raise ScenarioError("no run files to aggregate")
    runs = [read_run_file(p) for p in paths]
    fingerprints = {r["meta"].get("fingerprint") for r in runs}
    if len(fingerprints) != 1:
        raise ScenarioError("refusing to aggregate mixed scenarios: %s"
                            % sorted(fingerprints))
    meta = runs[0]["meta"]

    per_payload = {}
    lat_by_hops = {}
    lat_by_frags = {}
    causes = Counter()
    retrans_run_means = []
    pktbuf_max = 0
    violations = 0
    for run in runs:
        for row in run["tables"]["summary"]:
            p = row["payload"]
            entry = per_payload.setdefault(p, {
                "frag_count": int(row["frag_count"]),
                "sent": [], "delivered": [], "pdr": [],
                "l2_retransmissions_per_node": [],
            })
            entry["sent"].append(int(row["sent"]))
            entry["delivered"].append(int(row["delivered"]))
            entry["pdr"].append(int(row["delivered"]) / int(row["sent"]))
        for row in run["tables"]["latency"]:
            lat = int(row["latency_us"])
            lat_by_hops.setdefault(row["hop_distance"], []).append(lat)
            lat_by_frags.setdefault(row["frag_count"], []).append(lat)
        for row in run["tables"]["loss_causes"]:
            causes[row["cause"]] += int(row["count"])
        node_rows = run["tables"]["node_counters"]
        retrans_run_means.append(statistics.mean(
            int(r["l2_retransmissions"]) for r in node_rows))
        by_payload = {}
        for r in node_rows:
            by_payload.setdefault(r["payload"], []).append(
                int(r["l2_retransmissions"]))
            pktbuf_max = max(pktbuf_max, int(r["pktbuf_high_water"]))
        for p, vals in by_payload.items():
            per_payload[p]["l2_retransmissions_per_node"].append(
                statistics.mean(vals))
        violations += len(run["violations"])

    rbuf = {"rbuf_full_sink": 0, "rbuf_full_others": 0,
            "rbuf_timeout_sink": 0, "rbuf_timeout_no_first_sink": 0,
            "rbuf_timeout_others": 0, "rbuf_timeout_no_first_others": 0}
    for run in runs:
        for r in run["tables"]["node_counters"]:
            where = "sink" if int(r["hop_distance"]) == 0 else "others"
            rbuf["rbuf_full_" + where] += int(r["rbuf_full"])
            rbuf["rbuf_timeout_" + where] += int(r["rbuf_timeout"])
            rbuf["rbuf_timeout_no_first_" + where] += int(
                r["rbuf_timeout_no_first"])
    if rbuf["rbuf_timeout_others"]:
        rbuf["no_first_share_others"] = (
            rbuf["rbuf_timeout_no_first_others"]
            / rbuf["rbuf_timeout_others"])
    else:
        rbuf["no_first_share_others"] = None
    expired = rbuf["rbuf_timeout_sink"] + rbuf["rbuf_timeout_others"]
    if expired:
        rbuf["no_first_share_all"] = (
            (rbuf["rbuf_timeout_no_first_sink"]
             + rbuf["rbuf_timeout_no_first_others"]) / expired)
    else:
        rbuf["no_first_share_all"] = None

    for entry in per_payload.values():
        entry["pdr_mean"] = statistics.mean(entry["pdr"])
        entry["l2_retransmissions_per_node_mean"] = statistics.mean(
            entry["l2_retransmissions_per_node"])

    return {
        "version": 1,
        "fingerprint": meta["fingerprint"],
        "strategy": meta["strategy"],
        "topology_sha256": meta["topology_sha256"],
        "runs": len(runs),
        "seeds": [int(s) for s in meta["seeds"].split(",")],
        "per_payload": per_payload,
        "latency_by_hops": {k: _stats(v)
                            for k, v in sorted(lat_by_hops.items())},
        "latency_by_frag_count": {k: _stats(v)
                                  for k, v in sorted(lat_by_frags.items())},
        "loss_causes": dict(sorted(causes.items())),
        "l2_retransmissions_per_node_mean":
            statistics.mean(retrans_run_means),
        "pktbuf_high_water_max": pktbuf_max,
        "rbuf": rbuf,
        "violations": violations,
    }
