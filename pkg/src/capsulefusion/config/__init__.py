from .settings import DATA_ROOT, DEFAULT_SEED, LOG_LEVEL, RUNS_DIR, WORKERS
from .run import (
    SECTIONS,
    DataConfig,
    RunConfig,
    apply_overrides,
    load_run_config,
    parse_override,
    read_config_file,
    resolve_profile,
    save_run_config,
)
