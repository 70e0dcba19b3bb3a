import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from deeptransport.graph import load_graph

JUNCTION_EDGES = [
    ("L5", "L4"), ("L6", "L5"), ("L2", "L5"),
    ("L4", "L3"), ("L3", "L1"), ("L3", "L2"),
]


@pytest.fixture
def junction_graph():
    """Six sections: two paths merge into L4 upstream, two fork off downstream."""
    return load_graph(JUNCTION_EDGES)
