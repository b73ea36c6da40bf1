import os
import sys

from src.config import parse_config
from src.database import RunLog, SessionLocal, init_db
from src.scenarios import LEDGER_NAME
from src.storage import verify_manifest

out_dir = sys.argv[1] if len(sys.argv) > 1 else "results"
ledger_url = f"sqlite:///{os.path.join(out_dir, LEDGER_NAME)}"

print("--- Checking config ---")
try:
    with open(os.path.join(out_dir, "halfwave.conf"), "r") as f:
        cfg = parse_config(f.read())
        print("Config parsed successfully.")
        ledger_url = cfg["ledger"]["url"] or ledger_url
        print(f"Scenario: {cfg['scenario']}, grid: n={cfg['grid']['n']} L={cfg['grid']['box_length']}")
except Exception as e:
    print(f"Config Error: {e}")

print("\n--- Checking manifest ---")
try:
    problems = verify_manifest(out_dir)
    if problems:
        for problem in problems:
            print(f"  {problem}")
    else:
        print("All listed files match their checksums.")
except Exception as e:
    print(f"Manifest Error: {e}")

print("\n--- Checking ledger ---")
try:
    init_db(ledger_url)
    db = SessionLocal()
    count = db.query(RunLog).count()
    print(f"Run Count: {count}")
    for log in db.query(RunLog).order_by(RunLog.timestamp.desc()).limit(10):
        print(f"  {log.timestamp:%Y-%m-%d %H:%M:%S} {log.scenario:<15} {log.status:<8} exit={log.exit_code} {log.summary}")
    db.close()
except Exception as e:
    print(f"Ledger Error: {e}")
