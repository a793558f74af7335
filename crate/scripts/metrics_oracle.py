#!/usr/bin/env python3
"""Generate a synthetic event log and its expected metrics.

The expected values are computed here, directly from the generated
transactions, without reading the log back. Output goes to
crates/core/tests/fixtures/.
"""
import json
import random
from pathlib import Path

KINDS = ["getAssociation", "getByKeyword", "getConversation", "getMessages",
         "indexMessages", "resetCutoff", "sendMsg", "removeMessages", "importMessages"]
TABLES = ["TermTable", "InterTable", "MessageTable", "SeqNoTable"]
OPS = ["read", "append", "remove", "write_seq", "increment_seq"]


def main():
    rng = random.Random(20240611)
    lines = []  # (time, order, text)
    txns = []
    n_ops = 0

    def emit(t, text):
        lines.append((t, len(lines), text))

    run_start = 0
    emit(run_start, f"{run_start}\tRUN_START\t-\t-\t-\t-\t-")
    client_spans = {}
    for client in range(6):
        t = rng.randrange(1_000, 50_000)
        client_spans[client] = [t, None]
        emit(t, f"{t}\tCLIENT_START\t-\t{client}\t-\t-\t-")
        for seq in range(1, rng.randrange(3, 12)):
            txn = (client + 1) << 40 | seq
            kind = rng.choice(KINDS)
            t += rng.randrange(100, 20_000)
            start = t
            emit(t, f"{t}\tTXN_START\t{txn}\t{client}\t-\t-\t{kind}")
            attempts = 1 + (rng.randrange(4) if rng.random() < 0.4 else 0)
            first_retry = None
            for attempt in range(1, attempts + 1):
                if attempt > 1:
                    t += rng.randrange(10, 5_000)
                    first_retry = first_retry or t
                    emit(t, f"{t}\tRETRY_START\t{txn}\t{client}\t{attempt}\t-\t-")
                for _ in range(rng.randrange(1, 6)):
                    t += rng.randrange(1, 3_000)
                    b = f"{rng.choice(TABLES)}#{rng.randrange(64)}"
                    emit(t, f"{t}\tBUCKET_OP\t{txn}\t{client}\t{attempt}\t{b}\t{rng.choice(OPS)}")
                    n_ops += 1
            t += rng.randrange(1, 2_000)
            emit(t, f"{t}\tCOMMIT\t{txn}\t{client}\t{attempts}\t-\t-")
            txns.append(dict(kind=kind, start=start, commit=t, attempts=attempts, first_retry=first_retry))
            if rng.random() < 0.3:
                t += rng.randrange(1, 500)
                emit(t, f"{t}\tBUCKET_OP\t0\t{client}\t0\tSeqNoTable#{rng.randrange(64)}\tread")
                n_ops += 1
        t += rng.randrange(1, 10_000)
        client_spans[client][1] = t
        emit(t, f"{t}\tCLIENT_END\t-\t{client}\t-\t-\t-")
    run_end = max(e for _, e in client_spans.values()) + 12_345
    emit(run_end, f"{run_end}\tRUN_END\t-\t-\t-\t-\t-")

    lines.sort()
    parallel = max(e for _, e in client_spans.values()) - min(s for s, _ in client_spans.values())
    flows = [x["commit"] - x["start"] for x in txns]
    commits = len(txns)
    attempts = sum(x["attempts"] for x in txns)
    startup = sum((x["first_retry"] - x["start"]) if x["first_retry"] else (x["commit"] - x["start"]) for x in txns)
    retry = sum((x["commit"] - x["first_retry"]) for x in txns if x["first_retry"])
    per_kind = {}
    for x, f in zip(txns, flows):
        k = per_kind.setdefault(x["kind"], {"commits": 0, "flow_ns": 0})
        k["commits"] += 1
        k["flow_ns"] += f
    expected = {
        "clients": len(client_spans),
        "commits": commits,
        "attempts": attempts,
        "aborted_attempts": attempts - commits,
        "bucket_ops": n_ops,
        "throughput_per_s": commits / (parallel / 1e9),
        "mean_flow_s": sum(flows) / commits / 1e9,
        "abort_ratio": (attempts - commits) / attempts,
        "retry_rate": attempts / commits,
        "txn_time_s": sum(flows) / 1e9,
        "retry_time_s": retry / 1e9,
        "startup_time_s": startup / 1e9,
        "total_time_s": (run_end - run_start) / 1e9,
        "parallel_time_s": parallel / 1e9,
        "txn_ratio": min(1.0, sum(flows) / (len(client_spans) * parallel)),
        "per_kind": per_kind,
    }
    out = Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures"
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics_events.tsv").write_text("".join(text + "\n" for _, _, text in lines))
    (out / "metrics_expected.json").write_text(json.dumps(expected, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
