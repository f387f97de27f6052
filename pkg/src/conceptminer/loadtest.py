"""Load generator for the tagging service.

Hammers POST /tag from worker threads for a fixed duration against a
payload pool, then reports sustained throughput and the error count. Used
by the acceptance suite and runnable standalone against any deployed
instance.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from typing import Sequence

import httpx


@dataclass(frozen=True)
class LoadReport:
    duration_s: float
    requests: int
    errors: int
    docs_per_second: float
    p50_ms: float
    p99_ms: float


def run_load(
    base_url: str,
    payloads: Sequence[dict],
    duration_s: float = 60.0,
    concurrency: int = 4,
    timeout_s: float = 10.0,
) -> LoadReport:
    """Round-robin the payload pool until the clock runs out."""
    if not payloads:
        raise ValueError("payload pool must be non-empty")
    stop_at = time.monotonic() + duration_s
    lock = threading.Lock()
    latencies: list[float] = []
    counters = {"requests": 0, "errors": 0}

    def worker(worker_id: int) -> None:
        i = worker_id
        with httpx.Client(base_url=base_url, timeout=timeout_s) as client:
            while time.monotonic() < stop_at:
                payload = payloads[i % len(payloads)]
                i += concurrency
                started = time.monotonic()
                ok = False
                try:
                    resp = client.post("/tag", json=payload)
                    ok = resp.status_code == 200
                except httpx.HTTPError:
                    ok = False
                elapsed = (time.monotonic() - started) * 1000.0
                with lock:
                    counters["requests"] += 1
                    if not ok:
                        counters["errors"] += 1
                    latencies.append(elapsed)

    threads = [
        threading.Thread(target=worker, args=(w,), daemon=True)
        for w in range(concurrency)
    ]
    wall_start = time.monotonic()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall = time.monotonic() - wall_start

    latencies.sort()

    def percentile(p: float) -> float:
        if not latencies:
            return 0.0
        idx = min(len(latencies) - 1, int(p * len(latencies)))
        return latencies[idx]

    n_ok = counters["requests"] - counters["errors"]
    return LoadReport(
        duration_s=wall,
        requests=counters["requests"],
        errors=counters["errors"],
        docs_per_second=n_ok / wall if wall > 0 else 0.0,
        p50_ms=percentile(0.50),
        p99_ms=percentile(0.99),
    )


def main() -> None:
    import argparse

    parser = argparse.ArgumentParser(description="load-test a tagging service")
    parser.add_argument("--url", required=True, help="service base URL")
    parser.add_argument("--docs", required=True,
                        help="JSONL file of {title, content} payloads")
    parser.add_argument("--duration", type=float, default=60.0)
    parser.add_argument("--concurrency", type=int, default=4)
    args = parser.parse_args()

    payloads = []
    with open(args.docs, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                record = json.loads(line)
                payloads.append(
                    {"title": record["title"], "content": record.get("content", "")}
                )
    report = run_load(args.url, payloads, args.duration, args.concurrency)
    print(
        f"requests={report.requests} errors={report.errors} "
        f"docs_per_second={report.docs_per_second:.1f} "
        f"p50={report.p50_ms:.1f}ms p99={report.p99_ms:.1f}ms"
    )
    raise SystemExit(0 if report.errors == 0 else 1)


if __name__ == "__main__":
    main()
