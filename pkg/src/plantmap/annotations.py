"""Point/polyline annotation sets and their text format.

One record per line: `P,x,y` for points (`P,x,y,score` for scored
detections), `L,x1,y1,x2,y2,...` for polylines. Optional `W,wx,wy`
companion lines directly after a record carry world coordinates (one
per point, one per polyline vertex). `#` starts a comment. Floats are
written with repr precision, so values round-trip exactly.
"""


class AnnotationSet:
    """Plant points and row polylines in one coordinate frame.

    scores aligns with points (detections); world_points and
    world_polylines mirror points/polylines when georeferenced output
    is attached. All optional fields may be None.
    """

    __slots__ = ("points", "polylines", "scores", "world_points", "world_polylines")

    def __init__(self, points=None, polylines=None, scores=None,
                 world_points=None, world_polylines=None):
        self.points = [tuple(p) for p in points] if points else []
        self.polylines = [[tuple(v) for v in pl] for pl in polylines] if polylines else []
        self.scores = list(scores) if scores is not None else None
        self.world_points = [tuple(p) for p in world_points] if world_points is not None else None
        self.world_polylines = (
            [[tuple(v) for v in pl] for pl in world_polylines]
            if world_polylines is not None
            else None
        )

    def __eq__(self, other):
        return isinstance(other, AnnotationSet) and all(
            getattr(self, f) == getattr(other, f) for f in self.__slots__
        )

    def __repr__(self):
        return f"AnnotationSet({len(self.points)} points, {len(self.polylines)} polylines)"


def _fmt(v):
    return repr(float(v))


def save_annotations(path, ann):
    lines = []
    for i, (x, y) in enumerate(ann.points):
        rec = f"P,{_fmt(x)},{_fmt(y)}"
        if ann.scores is not None and ann.scores[i] is not None:
            rec += f",{_fmt(ann.scores[i])}"
        lines.append(rec)
        if ann.world_points is not None and ann.world_points[i] is not None:
            wx, wy = ann.world_points[i]
            lines.append(f"W,{_fmt(wx)},{_fmt(wy)}")
    for i, poly in enumerate(ann.polylines):
        lines.append("L," + ",".join(f"{_fmt(x)},{_fmt(y)}" for x, y in poly))
        if ann.world_polylines is not None and ann.world_polylines[i] is not None:
            for wx, wy in ann.world_polylines[i]:
                lines.append(f"W,{_fmt(wx)},{_fmt(wy)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def load_annotations(path):
    points, polylines = [], []
    scores, wpoints, wpolys = [], [], []
    has_scores = has_wp = has_wl = False
    last = None  # ("P",) or ("L", n_vertices) for W attachment
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split(",")
            tag = fields[0].strip().upper()
            try:
                vals = [float(v) for v in fields[1:]]
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: non-numeric field") from None
            if tag == "P":
                if len(vals) not in (2, 3):
                    raise ValueError(f"{path}: line {lineno}: P takes 2 or 3 values")
                points.append((vals[0], vals[1]))
                scores.append(vals[2] if len(vals) == 3 else None)
                if len(vals) == 3:
                    has_scores = True
                wpoints.append(None)
                last = ("P",)
            elif tag == "L":
                if len(vals) < 4 or len(vals) % 2:
                    raise ValueError(
                        f"{path}: line {lineno}: L needs an even count of >= 4 coordinates"
                    )
                polylines.append([(vals[i], vals[i + 1]) for i in range(0, len(vals), 2)])
                wpolys.append(None)
                last = ("L", len(vals) // 2)
            elif tag == "W":
                if len(vals) != 2:
                    raise ValueError(f"{path}: line {lineno}: W takes exactly 2 values")
                if last is None:
                    raise ValueError(f"{path}: line {lineno}: W line without a preceding record")
                if last[0] == "P":
                    wpoints[-1] = (vals[0], vals[1])
                    has_wp = True
                else:
                    if wpolys[-1] is None:
                        wpolys[-1] = []
                    if len(wpolys[-1]) >= last[1]:
                        raise ValueError(
                            f"{path}: line {lineno}: more W lines than polyline vertices"
                        )
                    wpolys[-1].append((vals[0], vals[1]))
                    has_wl = True
            else:
                raise ValueError(f"{path}: line {lineno}: unknown record tag {tag!r}")
    return AnnotationSet(
        points=points,
        polylines=polylines,
        scores=scores if has_scores else None,
        world_points=wpoints if has_wp else None,
        world_polylines=wpolys if has_wl else None,
    )
