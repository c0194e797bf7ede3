from __future__ import annotations

import pytest

from tokenflow.semantics.templates import load_template_db


@pytest.fixture(scope="session")
def db():
    return load_template_db()
