# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

import hashlib

__all__ = ["derive_seed"]


def derive_seed(master: int, *parts: object) -> int:
    """
    Derives a 32-bit seed from a master seed and a tuple of identifying parts.

    The derivation is a pure function of its inputs, so any single sweep cell
    or dataset trial can be re-run in isolation and reproduce its output.
    """
    key = ":".join([str(master), *(str(p) for p in parts)])
    digest = hashlib.sha256(key.encode("utf-8")).hexdigest()
    return int(digest[:8], 16)
