from __future__ import annotations

import json
import os
import subprocess
import sys
from pathlib import Path

SCRIPTS = Path(__file__).resolve().parents[1] / "scripts"


def test_run_ablation_offline(tmp_path):
    env = {k: v for k, v in os.environ.items() if not k.startswith("TABLERAG_")}
    out = tmp_path / "ablation.json"
    proc = subprocess.run([sys.executable, str(SCRIPTS / "run_ablation.py"), "--out", str(out)],
                          capture_output=True, text=True, env=env, timeout=120)
    assert proc.returncode == 0, proc.stderr
    rows = {r["variant"]: r for r in json.loads(out.read_text())["rows"]}
    assert rows["no_sql"]["sql_calls"] == 0 and rows["full"]["sql_calls"] > 0
    assert rows["no_text_retrieval"]["compose_with_retrieved_text"] == 0
