"""Reference chart data built from full bundle structures.

Used by experiments and tests to certify recovered chart operators against
ground truth; the reconstruction layer itself never touches these inputs.
"""

from __future__ import annotations

import numpy as np

from .bundle import HermitianBundle
from .manifold import Region
from .reconstruction import ChartOperator


def chart_operator_from_bundle(b: HermitianBundle, region: Region, chart_local) -> ChartOperator:
    """Extract the true transports and potential on a chart of a region.

    chart_local indexes vertices of the region; edges and transport
    orientation follow the recovered-chart convention (data carried from
    edge[1] to edge[0]).
    """
    chart = [int(v) for v in chart_local]
    glob = [region.vertices[v] for v in chart]
    lut = b.transport_lookup()
    pos = {g: i for i, g in enumerate(glob)}
    edges, transports = [], []
    for i, gv in enumerate(glob):
        for j, gu in enumerate(glob):
            if j <= i:
                continue
            if (gv, gu) in lut:
                edges.append((i, j))
                transports.append(lut[(gv, gu)])
    pots = np.asarray([b.potential[g] for g in glob])
    r = b.rank
    return ChartOperator(
        vertices=tuple(chart),
        edges=edges,
        transports=np.asarray(transports).reshape(len(transports), r, r),
        potentials=pots.reshape(len(glob), r, r),
        diagnostics={"source": "reference"},
    )
