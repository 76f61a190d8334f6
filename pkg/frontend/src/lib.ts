/**
 * Protocol-v1 data model for an external analyzer.
 *
 * Everything here mirrors the server's published schemas (one JSON object
 * per line on the wire; see docs/trace-format.md and docs/state-schema.md
 * in the server package). Field names are identical on purpose: this file
 * doubles as executable documentation of the protocol.
 */

// ---------------------------------------------------------------------------
// Wire messages
// ---------------------------------------------------------------------------

export interface EventMsg {
  type: "event";
  chrono: number;
  tags: string[];
  port: string;
  attrs: EventAttrs;
  delta?: DeltaOp[];
}

export interface EventAttrs {
  depths?: [number, number]; // [invocation, proof depth]
  goal?: string;
  pred?: string;
  detail?: Record<string, unknown>;
  domains?: Record<string, number[][]>;
}

export interface SnapshotMsg {
  type: "snapshot";
  chrono: number;
  state: FullState;
}

export interface EndMsg {
  type: "end";
  chrono: number;
  solutions: number;
}

export interface AckMsg {
  type: "ack";
  protocol_version?: string;
  id?: string;
  op?: string;
  chrono?: number;
}

export interface ErrMsg {
  type: "err";
  reason: string;
}

export type ServerMsg = EventMsg | SnapshotMsg | EndMsg | AckMsg | ErrMsg;

export class ProtocolError extends Error {}

/** Parse one line from the server; rejects anything off-protocol. */
export function decodeLine(line: string): ServerMsg {
  let data: unknown;
  try {
    data = JSON.parse(line);
  } catch (e) {
    throw new ProtocolError(`bad JSON line: ${(e as Error).message}`);
  }
  if (typeof data !== "object" || data === null || !("type" in data)) {
    throw new ProtocolError("message must be an object with a type");
  }
  const msg = data as { type: string };
  switch (msg.type) {
    case "event": {
      const ev = data as EventMsg;
      if (typeof ev.chrono !== "number" || typeof ev.port !== "string" || !Array.isArray(ev.tags)) {
        throw new ProtocolError("malformed event");
      }
      if (typeof ev.attrs !== "object" || ev.attrs === null) {
        throw new ProtocolError("event without attrs object");
      }
      return ev;
    }
    case "snapshot": {
      const s = data as SnapshotMsg;
      if (typeof s.chrono !== "number" || typeof s.state !== "object") {
        throw new ProtocolError("malformed snapshot");
      }
      return s;
    }
    case "end":
    case "ack":
    case "err":
      return data as ServerMsg;
    default:
      throw new ProtocolError(`unknown message type ${msg.type}`);
  }
}

// ---------------------------------------------------------------------------
// Full state and delta replay
// ---------------------------------------------------------------------------

export interface ProofNode {
  parent: number | null;
  goal: string;
  status: string;
  depth: number;
}

export interface SearchNode {
  parent: number | null;
  kind: string;
  untried: number;
}

export interface FullState {
  chrono: number;
  goal_stack: string[];
  proof_tree: Record<string, ProofNode>;
  search_tree: Record<string, SearchNode>;
  current_node: number;
  fd_vars: Record<string, number[][]>;
  constraint_store: Record<string, string>;
  propagation_queue: number[];
  solutions: number;
}

export type DeltaOp =
  | { op: "push_goal"; goal: string }
  | { op: "pop_goal" }
  | { op: "add_proof_node"; parent: number | null; node: number; goal: string }
  | { op: "set_node_status"; tree: "proof" | "search"; node: number; status: string | number }
  | { op: "add_search_node"; parent: number | null; node: number; kind: string }
  | { op: "set_current_node"; node: number }
  | { op: "set_domain"; var: string; domain: number[][] }
  | { op: "narrow_domain"; var: string; removed: number[][] }
  | { op: "add_constraint"; cid: number; text: string }
  | { op: "remove_constraint"; cid: number }
  | { op: "set_queue"; ids: number[] }
  | { op: "incr_solutions" };

export class DeltaInconsistent extends Error {}

function domainValues(ranges: number[][]): Set<number> {
  const out = new Set<number>();
  for (const [lo, hi] of ranges) {
    for (let v = lo; v <= hi; v++) out.add(v);
  }
  return out;
}

function valuesToRanges(values: Set<number>): number[][] {
  const sorted = [...values].sort((a, b) => a - b);
  const out: number[][] = [];
  for (const v of sorted) {
    const last = out[out.length - 1];
    if (last && v === last[1] + 1) last[1] = v;
    else out.push([v, v]);
  }
  return out;
}

/** Apply one delta in place; throws DeltaInconsistent on structural holes. */
export function applyOps(state: FullState, ops: DeltaOp[]): void {
  for (const op of ops) {
    switch (op.op) {
      case "push_goal":
        state.goal_stack.push(op.goal);
        break;
      case "pop_goal":
        if (state.goal_stack.length === 0) throw new DeltaInconsistent("pop on empty goal stack");
        state.goal_stack.pop();
        break;
      case "add_proof_node": {
        const key = String(op.node);
        if (key in state.proof_tree) throw new DeltaInconsistent(`proof node ${key} exists`);
        let depth = 1;
        if (op.parent !== null) {
          const parent = state.proof_tree[String(op.parent)];
          if (!parent) throw new DeltaInconsistent(`proof parent ${op.parent} missing`);
          depth = parent.depth + 1;
        }
        state.proof_tree[key] = { parent: op.parent, goal: op.goal, status: "open", depth };
        break;
      }
      case "set_node_status": {
        const key = String(op.node);
        if (op.tree === "proof") {
          const node = state.proof_tree[key];
          if (!node) throw new DeltaInconsistent(`proof node ${key} missing`);
          node.status = String(op.status);
        } else {
          const node = state.search_tree[key];
          if (!node) throw new DeltaInconsistent(`search node ${key} missing`);
          node.untried = Number(op.status);
        }
        break;
      }
      case "add_search_node": {
        const key = String(op.node);
        if (key in state.search_tree) throw new DeltaInconsistent(`search node ${key} exists`);
        if (op.parent !== null && !(String(op.parent) in state.search_tree)) {
          throw new DeltaInconsistent(`search parent ${op.parent} missing`);
        }
        state.search_tree[key] = { parent: op.parent, kind: op.kind, untried: 0 };
        break;
      }
      case "set_current_node":
        if (!(String(op.node) in state.search_tree)) {
          throw new DeltaInconsistent(`current node ${op.node} missing`);
        }
        state.current_node = op.node;
        break;
      case "set_domain":
        state.fd_vars[op.var] = op.domain.map((r) => [...r]);
        break;
      case "narrow_domain": {
        const current = state.fd_vars[op.var];
        if (!current) throw new DeltaInconsistent(`variable ${op.var} missing`);
        const have = domainValues(current);
        for (const v of domainValues(op.removed)) {
          if (!have.delete(v)) throw new DeltaInconsistent(`narrowing ${op.var} removes absent value ${v}`);
        }
        state.fd_vars[op.var] = valuesToRanges(have);
        break;
      }
      case "add_constraint": {
        const key = String(op.cid);
        if (key in state.constraint_store) throw new DeltaInconsistent(`constraint ${key} exists`);
        state.constraint_store[key] = op.text;
        break;
      }
      case "remove_constraint": {
        const key = String(op.cid);
        if (!(key in state.constraint_store)) throw new DeltaInconsistent(`constraint ${key} missing`);
        delete state.constraint_store[key];
        break;
      }
      case "set_queue":
        state.propagation_queue = [...op.ids];
        break;
      case "incr_solutions":
        state.solutions += 1;
        break;
      default:
        throw new DeltaInconsistent(`unknown op ${(op as { op: string }).op}`);
    }
  }
}

/** Client-side copy of the engine's full state, rebuilt from deltas. */
export class Mirror {
  state: FullState | null = null;
  lastAppliedChrono = -1;
  gapsSeen = 0;
  stale = false;

  load(state: FullState): void {
    this.state = state;
    this.lastAppliedChrono = state.chrono;
    this.stale = false;
  }

  /** Apply an event's delta; marks the mirror stale on inconsistency. */
  rebuild(ev: EventMsg): boolean {
    if (this.stale || this.state === null) return false;
    if (ev.chrono <= this.lastAppliedChrono) return false;
    if (!ev.delta) {
      this.stale = true;
      return false;
    }
    if (ev.chrono > this.lastAppliedChrono + 1) this.gapsSeen += 1;
    try {
      applyOps(this.state, ev.delta);
    } catch (e) {
      if (e instanceof DeltaInconsistent) {
        this.stale = true;
        return false;
      }
      throw e;
    }
    this.state.chrono = ev.chrono;
    this.lastAppliedChrono = ev.chrono;
    return true;
  }

  maxProofDepth(): number {
    if (!this.state) return 0;
    let max = 0;
    for (const node of Object.values(this.state.proof_tree)) {
      if (node.depth > max) max = node.depth;
    }
    return max;
  }
}

// ---------------------------------------------------------------------------
// Depth statistics (must agree exactly with the reference analyzer)
// ---------------------------------------------------------------------------

export const WRAPPER_PRED = "$call$/1";

export class DepthStats {
  histogram = new Map<number, number>();
  events = 0;

  /** Count one delivered event. User depth = Byrd depth - 1; the top-level
   * wrapper invocation is excluded. */
  add(ev: EventMsg): void {
    this.events += 1;
    const depths = ev.attrs.depths;
    if (depths && ev.attrs.pred !== WRAPPER_PRED) {
      const d = depths[1] - 1;
      this.histogram.set(d, (this.histogram.get(d) ?? 0) + 1);
    }
  }

  maxDepth(): number {
    let max = 0;
    for (const d of this.histogram.keys()) if (d > max) max = d;
    return max;
  }

  meanDepth(): number {
    let total = 0;
    let n = 0;
    for (const [d, c] of this.histogram) {
      total += d * c;
      n += c;
    }
    return n === 0 ? 0 : total / n;
  }

  /** Identical shape to the reference analyzer's JSON output. */
  toJSON(): { histogram: Record<string, number>; events: number; max_depth: number; mean_depth: number } {
    const histogram: Record<string, number> = {};
    for (const d of [...this.histogram.keys()].sort((a, b) => a - b)) {
      histogram[String(d)] = this.histogram.get(d)!;
    }
    return { histogram, events: this.events, max_depth: this.maxDepth(), mean_depth: this.meanDepth() };
  }
}

// ---------------------------------------------------------------------------
// Outputs: CSV and the depth-over-chrono plot
// ---------------------------------------------------------------------------

const CSV_HEADER = "chrono,port,inv,depth,pred,goal";

function csvField(text: string): string {
  if (/[",\n]/.test(text)) return '"' + text.replace(/"/g, '""') + '"';
  return text;
}

export function eventsCsv(events: EventMsg[]): string {
  const lines = [CSV_HEADER];
  for (const ev of events) {
    const depths = ev.attrs.depths ?? ["", ""];
    lines.push(
      [
        String(ev.chrono),
        ev.port,
        String(depths[0]),
        String(depths[1]),
        csvField(ev.attrs.pred ?? ""),
        csvField(ev.attrs.goal ?? ""),
      ].join(",")
    );
  }
  return lines.join("\n") + "\n";
}

/** A small standalone SVG: proof depth of each event over the chrono. */
export function depthPlotSvg(events: EventMsg[], width = 800, height = 300): string {
  const pad = 30;
  const points: Array<[number, number]> = [];
  for (const ev of events) {
    if (ev.attrs.depths) points.push([ev.chrono, ev.attrs.depths[1]]);
  }
  const maxX = Math.max(1, ...points.map((p) => p[0]));
  const maxY = Math.max(1, ...points.map((p) => p[1]));
  const sx = (x: number) => pad + ((width - 2 * pad) * x) / maxX;
  const sy = (y: number) => height - pad - ((height - 2 * pad) * y) / maxY;
  const path = points.map(([x, y], i) => `${i === 0 ? "M" : "L"}${sx(x).toFixed(1)},${sy(y).toFixed(1)}`).join(" ");
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">`,
    `<rect width="${width}" height="${height}" fill="white"/>`,
    `<line x1="${pad}" y1="${height - pad}" x2="${width - pad}" y2="${height - pad}" stroke="black"/>`,
    `<line x1="${pad}" y1="${pad}" x2="${pad}" y2="${height - pad}" stroke="black"/>`,
    `<text x="${width / 2}" y="${height - 6}" font-size="11" text-anchor="middle">chrono (max ${maxX})</text>`,
    `<text x="12" y="${height / 2}" font-size="11" text-anchor="middle" transform="rotate(-90 12 ${height / 2})">proof depth (max ${maxY})</text>`,
    points.length ? `<path d="${path}" fill="none" stroke="steelblue" stroke-width="1"/>` : "",
    `</svg>`,
    "",
  ].join("\n");
}

// ---------------------------------------------------------------------------
// Filter files
// ---------------------------------------------------------------------------

/** Split a filter file into blocks; subscribe sends one block at a time. */
export function splitFilterBlocks(source: string): string[] {
  const out: string[] = [];
  const re = /filter\s+\w+\s*\{[^}]*\}/g;
  for (const m of source.matchAll(re)) out.push(m[0]);
  return out;
}
