import os
import shutil
import subprocess
import sys
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

OUTPUT_DIR = Path(os.getenv("HIERSSD_OUTPUT_DIR", "benchmark_output"))
DATASET = OUTPUT_DIR / "diuron_synthetic.csv"
SEED = os.getenv("HIERSSD_SEED", "0")


def reset_output():
    print(f"Removing {OUTPUT_DIR} ...")
    shutil.rmtree(OUTPUT_DIR, ignore_errors=True)
    OUTPUT_DIR.mkdir(parents=True)
    print("Output directory reset.")


def run(*args):
    command = [sys.executable, "-m", "hierssd", *args]
    print("Running:", " ".join(command[2:]))
    try:
        result = subprocess.run(command, check=True, capture_output=True, text=True)
    except subprocess.CalledProcessError as e:
        print(f"Command failed with exit code {e.returncode}")
        print(f"Stdout: {e.stdout}")
        print(f"Stderr: {e.stderr}")
        sys.exit(e.returncode)
    print(result.stdout)


if __name__ == "__main__":
    reset_output()
    run("synthesize", "--output", str(DATASET), "--seed", SEED)
    run("report", "--input", str(DATASET), "--output-dir", str(OUTPUT_DIR), "--seed", SEED, *sys.argv[1:])
    print(f"Ground truth for comparison: {DATASET.with_name(DATASET.stem + '.truth.json')}")
