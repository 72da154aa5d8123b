"""
End-to-end run through the command-line harness
===============================================

``affectrl demo`` writes the bundled task. ``affectrl train`` writes a trace,
periodic checkpoints and a greedy-decode summary. ``affectrl eval`` scores JSONL
predictions against references.
"""

import json
import tempfile
from pathlib import Path

from affectrl.cli import main

work = Path(tempfile.mkdtemp(prefix="affectrl-demo-"))
main(["demo", "--out", str(work / "task"), "--warm-start", "format"])
main(["train", "--config", str(work / "task" / "config.ini")])
run = work / "task" / "run"
print(sorted(p.name for p in run.iterdir()))

# %%
# Turn the greedy decodes into a prediction file and score it with the CLI.
summary = json.loads((run / "summary.json").read_text())
refs = [json.loads(line) for line in (work / "task" / "dataset.jsonl").read_text().splitlines()]
(work / "pred.jsonl").write_text("".join(
    json.dumps({"id": g["id"], "labels": [x.strip() for x in g["output"].split("<answer>")[-1]
                                          .removesuffix("</answer>").split(",")]}) + "\n"
    for g in summary["greedy"]))
(work / "ref.jsonl").write_text("".join(json.dumps({"id": r["id"], "labels": r["labels"]}) + "\n" for r in refs))
main(["eval", "--predictions", str(work / "pred.jsonl"), "--references", str(work / "ref.jsonl"),
      "--out", str(work / "ew_report.json")])
