import os

from dotenv import load_dotenv

# Load .env if present
load_dotenv()

# Read from environment with sensible defaults
DATA_ROOT = os.getenv("CAPSULEFUSION_DATA_ROOT", "./data")
RUNS_DIR = os.getenv("CAPSULEFUSION_RUNS_DIR", "./runs")
LOG_LEVEL = os.getenv("CAPSULEFUSION_LOG_LEVEL", "INFO")
DEFAULT_SEED = int(os.getenv("CAPSULEFUSION_SEED", "1234"))
WORKERS = int(os.getenv("CAPSULEFUSION_WORKERS", "2"))
