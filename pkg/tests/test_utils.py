# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

from pathlib import Path

from coreason_slipguard.utils.logger import RUN_LOG_NAME, attach_run_log, logger
from coreason_slipguard.utils.seeding import derive_seed


def test_derive_seed_is_stable_and_part_sensitive() -> None:
    assert derive_seed(0, "psc", 3, 1) == derive_seed(0, "psc", 3, 1)
    seeds = {derive_seed(0, kind, n, i) for kind in ("rsc", "psc") for n in range(2, 9) for i in range(10)}
    assert len(seeds) == 140
    assert derive_seed(1, "psc") != derive_seed(0, "psc")
    assert all(0 <= s < 2**32 for s in seeds)


def test_run_log_records_context(tmp_path: Path) -> None:
    run_dir = tmp_path / "run"
    handler_id = attach_run_log(run_dir, level="DEBUG")
    try:
        logger.debug("Sweep cell finished", kind="psc", n_basis=4)
    finally:
        logger.remove(handler_id)
    text = (run_dir / RUN_LOG_NAME).read_text()
    assert "Sweep cell finished" in text
    assert "'kind': 'psc'" in text

    logger.info("After removal")
    assert "After removal" not in (run_dir / RUN_LOG_NAME).read_text()
