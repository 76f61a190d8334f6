/**
 * Cross-language conformance: this client against the real server.
 *
 * Every scenario spawns the server as a separate process, runs this
 * analyzer over the live protocol, and (where the criterion asks for it)
 * spawns the reference depth analyzer on an identical second run to
 * compare statistics exactly. Skipped when the server package is not
 * installed in the ambient python.
 */

import { spawn, spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { runAnalyzer } from "../src/analyzer.js";

const PYTHON = process.env.TRACELENS_PYTHON ?? "python3";

const hasServer =
  spawnSync(PYTHON, ["-c", "import tracelens"], { encoding: "utf-8" }).status === 0;

const BYRD_FILTER =
  "filter byrd { when port in (call, exit, fail, redo, exception) attrs depths, goal, pred }";
const EVERYTHING_FILTER =
  "filter all { when chrono >= 0 attrs depths, goal, pred, detail, delta }";

const BENCH_SOURCE = "bench(0).\nbench(N) :- N>0, N1 is N-1, bench(N1).\n";

interface ServerProc {
  endpoint: string;
  done: Promise<{ code: number | null; report: Record<string, unknown> }>;
}

let workdir: string;

beforeAll(() => {
  workdir = fs.mkdtempSync(path.join(os.tmpdir(), "tracelens-ts-"));
});

afterAll(() => {
  fs.rmSync(workdir, { recursive: true, force: true });
});

function writeFile(name: string, content: string): string {
  const file = path.join(workdir, name);
  fs.writeFileSync(file, content);
  return file;
}

function startServer(programFile: string, goal: string, waitClients: number, extra: string[] = []): Promise<ServerProc> {
  const reportFile = path.join(workdir, `report-${Math.random().toString(36).slice(2)}.json`);
  const proc = spawn(PYTHON, [
    "-m",
    "tracelens",
    "serve",
    "--program",
    programFile,
    "--goal",
    goal,
    "--mode",
    "driven",
    "--listen",
    "127.0.0.1:0",
    "--wait-clients",
    String(waitClients),
    "--report",
    reportFile,
    ...extra,
  ]);
  let stderr = "";
  proc.stderr.on("data", (d: Buffer) => (stderr += d.toString()));
  const done = new Promise<{ code: number | null; report: Record<string, unknown> }>((resolve) => {
    proc.on("exit", (code) => {
      const report = fs.existsSync(reportFile)
        ? JSON.parse(fs.readFileSync(reportFile, "utf-8"))
        : {};
      resolve({ code, report });
    });
  });
  return new Promise((resolve, reject) => {
    let buffer = "";
    proc.stdout.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const m = buffer.match(/LISTENING (\S+)/);
      if (m) resolve({ endpoint: m[1], done });
    });
    proc.on("error", reject);
    setTimeout(() => reject(new Error(`server did not start: ${stderr}`)), 20000);
  });
}

function runReferenceDepthAnalyzer(programFile: string, goal: string): Promise<Record<string, unknown>> {
  // a second, identical run analyzed by the reference implementation
  return startServer(programFile, goal, 1).then(async (server) => {
    const timings = path.join(workdir, `ref-${Math.random().toString(36).slice(2)}.json`);
    const proc = spawn(PYTHON, [
      "-m",
      "tracelens",
      "analyze",
      "--connect",
      server.endpoint,
      "--analyzer",
      "depth",
      "--timings",
      timings,
      "--release",
    ]);
    await new Promise((resolve) => proc.on("exit", resolve));
    await server.done;
    return JSON.parse(fs.readFileSync(timings, "utf-8")).result as Record<string, unknown>;
  });
}

describe.skipIf(!hasServer)("protocol conformance against the live server", () => {
  it("handshakes, subscribes, decodes and matches the reference stats on bench(2)", async () => {
    const programFile = writeFile("bench.pl", BENCH_SOURCE);
    const filterFile = writeFile("byrd.flt", BYRD_FILTER);
    const outDir = path.join(workdir, "out-bench2");
    const server = await startServer(programFile, "bench(2)", 1);
    const result = await runAnalyzer({
      connect: server.endpoint,
      filters: [filterFile],
      out: outDir,
      release: true,
    });
    const { code } = await server.done;
    expect(code).toBe(0);
    expect(result.end).toEqual({ chrono: 25, solutions: 1 });

    const reference = await runReferenceDepthAnalyzer(programFile, "bench(2)");
    expect(result.depth_stats).toEqual(reference);

    // events.csv row count equals the reference analyzer's event count
    const csv = fs.readFileSync(path.join(outDir, "events.csv"), "utf-8").trim().split("\n");
    expect(csv.length - 1).toBe(reference.events as number);
    expect(fs.readFileSync(path.join(outDir, "depth_over_chrono.svg"), "utf-8")).toContain("<svg");
  }, 60000);

  it("empty subscription receives only end: csv is header only", async () => {
    const programFile = writeFile("bench.pl", BENCH_SOURCE);
    const outDir = path.join(workdir, "out-empty");
    const server = await startServer(programFile, "bench(2)", 1);
    const result = await runAnalyzer({ connect: server.endpoint, filters: [], out: outDir, release: true });
    await server.done;
    expect(result.events).toBe(0);
    expect(fs.readFileSync(path.join(outDir, "events.csv"), "utf-8")).toBe("chrono,port,inv,depth,pred,goal\n");
  }, 60000);

  it("mirrors an unfiltered stream and reports the final search tree", async () => {
    const queens = spawnSync(
      PYTHON,
      ["-c", "from tracelens.corpus import queens_program; print(queens_program(4).source)"],
      { encoding: "utf-8" }
    ).stdout;
    const programFile = writeFile("queens4.pl", queens);
    const filterFile = writeFile("all.flt", EVERYTHING_FILTER);
    const server = await startServer(programFile, "queens", 1);
    const result = await runAnalyzer({
      connect: server.endpoint,
      filters: [filterFile],
      release: true,
      mirror: true,
    });
    const { report } = await server.done;
    expect(result.mirror?.tracked).toBe(true);
    expect(result.mirror?.gaps_seen).toBe(0);
    expect(result.end?.solutions).toBe(2);
    expect(result.events).toBe(report.events_emitted);

    // mirror-derived proof depth agrees with the event-based statistic
    expect(result.mirror!.max_proof_depth - 1).toBe(result.depth_stats.max_depth);
  }, 60000);

  it("zero protocol errors and exact stats equality across the corpus", async () => {
    const corpus: Array<[string, string, string]> = [
      ["bench6.pl", BENCH_SOURCE, "bench(6)"],
      [
        "queens4.pl",
        spawnSync(PYTHON, ["-c", "from tracelens.corpus import queens_program; print(queens_program(4).source)"], {
          encoding: "utf-8",
        }).stdout,
        "queens",
      ],
      [
        "csp.pl",
        spawnSync(PYTHON, ["-c", "from tracelens.corpus import random_csp; print(random_csp(1234).program.source)"], {
          encoding: "utf-8",
        }).stdout,
        "csp",
      ],
    ];
    const filterFile = writeFile("byrd2.flt", BYRD_FILTER);
    for (const [name, source, goal] of corpus) {
      const programFile = writeFile(name, source);
      const server = await startServer(programFile, goal, 1);
      const result = await runAnalyzer({
        connect: server.endpoint,
        filters: [filterFile],
        release: true,
      });
      const { code } = await server.done;
      expect(code).toBe(0);
      const reference = await runReferenceDepthAnalyzer(programFile, goal);
      expect(result.depth_stats).toEqual(reference);
    }
  }, 180000);
});
