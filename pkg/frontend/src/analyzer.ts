/**
 * Trace analyzer CLI: connect, subscribe, decode, mirror, emit results.
 *
 *   node dist/analyzer.js --connect HOST:PORT [--filters FILE]... [--out DIR]
 *                         [--analyzer-id NAME] [--release]
 *
 * Speaks protocol version 1. Writes events.csv, depth_stats.json and
 * depth_over_chrono.svg into --out, and prints a one-line JSON summary to
 * stdout. Any protocol violation aborts with a nonzero exit status.
 */

import * as fs from "node:fs";
import * as net from "node:net";
import * as path from "node:path";

import {
  AckMsg,
  DepthStats,
  EventMsg,
  FullState,
  Mirror,
  ProtocolError,
  ServerMsg,
  decodeLine,
  depthPlotSvg,
  eventsCsv,
  splitFilterBlocks,
} from "./lib.js";

// ---------------------------------------------------------------------------
// Line-framed socket with promise-based reads
// ---------------------------------------------------------------------------

class LineConnection {
  private buffer = "";
  private lines: string[] = [];
  private waiters: Array<(line: string | null) => void> = [];
  private closed = false;

  constructor(private sock: net.Socket) {
    sock.setNoDelay(true);
    sock.on("data", (chunk: Buffer) => {
      this.buffer += chunk.toString("utf-8");
      let nl;
      while ((nl = this.buffer.indexOf("\n")) >= 0) {
        this.lines.push(this.buffer.slice(0, nl));
        this.buffer = this.buffer.slice(nl + 1);
      }
      this.flush();
    });
    const onGone = () => {
      this.closed = true;
      this.flush();
    };
    sock.on("end", onGone);
    sock.on("error", onGone);
    sock.on("close", onGone);
  }

  private flush(): void {
    while (this.waiters.length && (this.lines.length || this.closed)) {
      const waiter = this.waiters.shift()!;
      waiter(this.lines.length ? this.lines.shift()! : null);
    }
  }

  readLine(): Promise<string | null> {
    return new Promise((resolve) => {
      this.waiters.push(resolve);
      this.flush();
    });
  }

  send(msg: object): void {
    this.sock.write(JSON.stringify(msg) + "\n");
  }

  close(): void {
    this.sock.end();
  }
}

function connect(host: string, port: number): Promise<LineConnection> {
  return new Promise((resolve, reject) => {
    const sock = net.createConnection({ host, port }, () => resolve(new LineConnection(sock)));
    sock.once("error", reject);
  });
}

// ---------------------------------------------------------------------------
// Session: strictly FIFO, so replies can be awaited inline
// ---------------------------------------------------------------------------

export class AnalyzerSession {
  private pending: ServerMsg[] = [];
  ended = false;
  endInfo: { chrono: number; solutions: number } | null = null;

  constructor(private conn: LineConnection) {}

  private async next(): Promise<ServerMsg | null> {
    if (this.pending.length) return this.pending.shift()!;
    const line = await this.conn.readLine();
    if (line === null) return null;
    return decodeLine(line);
  }

  private async awaitReply(kind: "ack" | "snapshot"): Promise<ServerMsg> {
    for (;;) {
      const msg = await this.next();
      if (msg === null) throw new ProtocolError(`connection closed awaiting ${kind}`);
      if (msg.type === kind) return msg;
      if (msg.type === "err") throw new ProtocolError(`server error: ${msg.reason}`);
      if (msg.type === "event" || msg.type === "end") {
        this.pending.push(msg);
        if (msg.type === "end") this.ended = true;
      }
    }
  }

  async hello(analyzerId: string): Promise<string> {
    this.conn.send({ type: "hello", analyzer_id: analyzerId });
    const ack = (await this.awaitReply("ack")) as AckMsg;
    if (ack.protocol_version !== "1") {
      throw new ProtocolError(`unsupported protocol version ${ack.protocol_version}`);
    }
    return ack.protocol_version;
  }

  async subscribe(source: string): Promise<string> {
    this.conn.send({ type: "subscribe", source });
    const ack = (await this.awaitReply("ack")) as AckMsg;
    return ack.id ?? "";
  }

  async snapshot(): Promise<FullState> {
    this.conn.send({ type: "snapshot_req" });
    const msg = await this.awaitReply("snapshot");
    return (msg as { state: FullState }).state;
  }

  async release(): Promise<void> {
    this.conn.send({ type: "resume" });
    await this.awaitReply("ack");
  }

  /** Consume the event stream to its end. */
  async *events(): AsyncGenerator<EventMsg> {
    for (;;) {
      const msg = await this.next();
      if (msg === null) {
        if (!this.ended) throw new ProtocolError("connection closed before end");
        return;
      }
      if (msg.type === "event") yield msg;
      else if (msg.type === "end") {
        this.ended = true;
        this.endInfo = { chrono: msg.chrono, solutions: msg.solutions };
        return;
      }
      // unsolicited acks are legal noise; anything else already threw
    }
  }

  bye(): void {
    try {
      this.conn.send({ type: "bye" });
    } catch {
      /* already gone */
    }
    this.conn.close();
  }
}

// ---------------------------------------------------------------------------
// Main
// ---------------------------------------------------------------------------

export interface AnalyzerResult {
  events: number;
  depth_stats: ReturnType<DepthStats["toJSON"]>;
  mirror: { tracked: boolean; gaps_seen: number; max_proof_depth: number; search_nodes: number } | null;
  end: { chrono: number; solutions: number } | null;
}

export async function runAnalyzer(opts: {
  connect: string;
  filters: string[];
  out?: string;
  analyzerId?: string;
  release?: boolean;
  mirror?: boolean;
}): Promise<AnalyzerResult> {
  const sep = opts.connect.lastIndexOf(":");
  const host = opts.connect.slice(0, sep);
  const port = Number(opts.connect.slice(sep + 1));
  const session = new AnalyzerSession(await connect(host, port));
  await session.hello(opts.analyzerId ?? "ts-analyzer");

  for (const file of opts.filters) {
    const source = fs.readFileSync(file, "utf-8");
    for (const block of splitFilterBlocks(source)) {
      await session.subscribe(block);
    }
  }

  const mirror = new Mirror();
  if (opts.mirror) {
    mirror.load(await session.snapshot());
  }
  if (opts.release) await session.release();

  const stats = new DepthStats();
  const collected: EventMsg[] = [];
  for await (const ev of session.events()) {
    stats.add(ev);
    collected.push(ev);
    if (opts.mirror) mirror.rebuild(ev);
  }
  session.bye();

  if (opts.out) {
    fs.mkdirSync(opts.out, { recursive: true });
    fs.writeFileSync(path.join(opts.out, "events.csv"), eventsCsv(collected));
    fs.writeFileSync(path.join(opts.out, "depth_stats.json"), JSON.stringify(stats.toJSON(), null, 2) + "\n");
    fs.writeFileSync(path.join(opts.out, "depth_over_chrono.svg"), depthPlotSvg(collected));
  }
  return {
    events: collected.length,
    depth_stats: stats.toJSON(),
    mirror: opts.mirror
      ? {
          tracked: !mirror.stale,
          gaps_seen: mirror.gapsSeen,
          max_proof_depth: mirror.maxProofDepth(),
          search_nodes: mirror.state ? Object.keys(mirror.state.search_tree).length : 0,
        }
      : null,
    end: session.endInfo,
  };
}

function parseArgs(argv: string[]) {
  const opts = {
    connect: "",
    filters: [] as string[],
    out: undefined as string | undefined,
    analyzerId: "ts-analyzer",
    release: false,
    mirror: false,
  };
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--connect") opts.connect = argv[++i];
    else if (arg === "--filters") opts.filters.push(argv[++i]);
    else if (arg === "--out") opts.out = argv[++i];
    else if (arg === "--analyzer-id") opts.analyzerId = argv[++i];
    else if (arg === "--release") opts.release = true;
    else if (arg === "--mirror") opts.mirror = true;
    else throw new Error(`unknown argument ${arg}`);
  }
  if (!opts.connect) throw new Error("--connect HOST:PORT is required");
  return opts;
}

const invokedDirectly = process.argv[1] && import.meta.url.endsWith(path.basename(process.argv[1]));

if (invokedDirectly) {
  runAnalyzer(parseArgs(process.argv.slice(2)))
    .then((result) => {
      process.stdout.write(JSON.stringify(result) + "\n");
    })
    .catch((err) => {
      process.stderr.write(`error: ${err.message}\n`);
      process.exit(err instanceof ProtocolError ? 2 : 1);
    });
}
