"""URDF-subset parser and emitter, including the ``<sensor>`` extension.

Supported elements: ``<robot>``, ``<link>`` with ``<inertial>``
(mass/origin/inertia) and ``<visual>`` (origin + box|cylinder|sphere
geometry), ``<joint type="revolute">`` (origin, parent, child, axis, limit),
and the non-standard ``<sensor name type>`` carrying ``<parent link>`` and
``<origin xyz rpy>``. Documents are UTF-8; numbers use the ``.`` decimal
separator.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET

import numpy as np

from mapdyn.spatial import HomTransform, SpatialInertia, matrix_to_rpy
from mapdyn.model.tree import (
    DUMMY_INERTIA,
    DUMMY_MASS,
    Joint,
    KinematicTreeModel,
    Link,
    ModelError,
    SensorAttachment,
    Shape,
)


class UrdfError(ModelError):
    """Parse failure; the message carries the element path."""


def _floats(text, count, where):
    parts = (text or "").split()
    if len(parts) != count:
        raise UrdfError(f"{where}: expected {count} numbers, got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as exc:
        raise UrdfError(f"{where}: malformed number in {text!r}") from exc


def _float(text, where):
    try:
        return float(text)
    except (TypeError, ValueError) as exc:
        raise UrdfError(f"{where}: malformed number {text!r}") from exc


def _origin(el, where):
    if el is None:
        return HomTransform.identity()
    xyz = _floats(el.get("xyz", "0 0 0"), 3, f"{where}/origin")
    rpy = _floats(el.get("rpy", "0 0 0"), 3, f"{where}/origin")
    return HomTransform.from_rpy(xyz, rpy)


def _parse_link(el, index):
    name = el.get("name")
    where = f"robot/link[{index}]"
    if not name:
        raise UrdfError(f"{where}: link without a name")
    where = f"robot/link[@name={name!r}]"

    inertia = None
    inertial = el.find("inertial")
    if inertial is not None:
        mass_el = inertial.find("mass")
        if mass_el is None:
            raise UrdfError(f"{where}/inertial: missing <mass>")
        mass = _float(mass_el.get("value"), f"{where}/inertial/mass")
        com = _origin(inertial.find("origin"), f"{where}/inertial").translation
        in_el = inertial.find("inertia")
        if in_el is None:
            raise UrdfError(f"{where}/inertial: missing <inertia>")
        vals = {k: _float(in_el.get(k, "0"), f"{where}/inertial/inertia") for k in
                ("ixx", "iyy", "izz", "ixy", "ixz", "iyz")}
        rot = np.array(
            [
                [vals["ixx"], vals["ixy"], vals["ixz"]],
                [vals["ixy"], vals["iyy"], vals["iyz"]],
                [vals["ixz"], vals["iyz"], vals["izz"]],
            ]
        )
        try:
            inertia = SpatialInertia(mass, com, rot)
        except ValueError as exc:
            raise UrdfError(f"{where}/inertial: {exc}") from exc

    visual = None
    vis_el = el.find("visual")
    if vis_el is not None:
        geom = vis_el.find("geometry")
        if geom is None or len(geom) != 1:
            raise UrdfError(f"{where}/visual: geometry must hold exactly one primitive")
        prim = geom[0]
        origin = _origin(vis_el.find("origin"), f"{where}/visual")
        if prim.tag == "box":
            dims = tuple(_floats(prim.get("size"), 3, f"{where}/visual/box"))
            visual = Shape("box", dims, origin)
        elif prim.tag == "cylinder":
            r = _float(prim.get("radius"), f"{where}/visual/cylinder")
            h = _float(prim.get("length"), f"{where}/visual/cylinder")
            visual = Shape("cylinder", (r, h), origin)
        elif prim.tag == "sphere":
            r = _float(prim.get("radius"), f"{where}/visual/sphere")
            visual = Shape("sphere", (r,), origin)
        else:
            raise UrdfError(f"{where}/visual: unsupported geometry <{prim.tag}>")

    is_dummy = (
        inertia is not None
        and math.isclose(inertia.mass, DUMMY_MASS, rel_tol=1e-9)
        and np.allclose(inertia.inertia, DUMMY_INERTIA * np.eye(3), atol=1e-12)
    )
    return Link(name, inertia, visual, is_dummy)


def _parse_joint(el, index):
    name = el.get("name")
    where = f"robot/joint[{index}]" if not name else f"robot/joint[@name={name!r}]"
    if not name:
        raise UrdfError(f"{where}: joint without a name")
    jtype = el.get("type")
    if jtype != "revolute":
        raise UrdfError(f"{where}: unknown joint type {jtype!r} (only revolute supported)")
    parent_el = el.find("parent")
    child_el = el.find("child")
    if parent_el is None or parent_el.get("link") is None:
        raise UrdfError(f"{where}: missing <parent link=...>")
    if child_el is None or child_el.get("link") is None:
        raise UrdfError(f"{where}: missing <child link=...>")
    axis_el = el.find("axis")
    axis = _floats(axis_el.get("xyz"), 3, f"{where}/axis") if axis_el is not None else np.array([1.0, 0.0, 0.0])
    limit_el = el.find("limit")
    if limit_el is not None:
        lo = _float(limit_el.get("lower", "-3.141592653589793"), f"{where}/limit")
        hi = _float(limit_el.get("upper", "3.141592653589793"), f"{where}/limit")
    else:
        lo, hi = -math.pi, math.pi
    try:
        return Joint(
            name,
            parent_el.get("link"),
            child_el.get("link"),
            axis,
            _origin(el.find("origin"), where),
            (lo, hi),
        )
    except ModelError as exc:
        raise UrdfError(f"{where}: {exc}") from exc


def _parse_sensor(el, index):
    name = el.get("name")
    where = f"robot/sensor[{index}]" if not name else f"robot/sensor[@name={name!r}]"
    if not name:
        raise UrdfError(f"{where}: sensor without a name")
    kind = el.get("type")
    parent_el = el.find("parent")
    if parent_el is None or parent_el.get("link") is None:
        raise UrdfError(f"{where}: missing <parent link=...>")
    try:
        return SensorAttachment(name, kind, parent_el.get("link"), _origin(el.find("origin"), where))
    except ModelError as exc:
        raise UrdfError(f"{where}: {exc}") from exc


def parse_model(document: str) -> KinematicTreeModel:
    """Parse a URDF-subset document into a kinematic tree model."""
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise UrdfError(f"not well-formed XML: {exc}") from exc
    if root.tag != "robot":
        raise UrdfError(f"root element must be <robot>, found <{root.tag}>")

    links = [_parse_link(el, i) for i, el in enumerate(root.findall("link"))]
    joints = [_parse_joint(el, i) for i, el in enumerate(root.findall("joint"))]
    sensors = [_parse_sensor(el, i) for i, el in enumerate(root.findall("sensor"))]
    if not links:
        raise UrdfError("robot has no links")
    try:
        return KinematicTreeModel(root.get("name", "robot"), links, joints, sensors)
    except ModelError as exc:
        raise UrdfError(str(exc)) from exc


# ---------------------------------------------------------------------------
# emission


def _fmt(x: float) -> str:
    return repr(float(x))


def _fmt_vec(v) -> str:
    return " ".join(_fmt(x) for x in v)


def _origin_xml(h: HomTransform, pad: str) -> str:
    rpy = matrix_to_rpy(h.rotation)
    return f'{pad}<origin xyz="{_fmt_vec(h.translation)}" rpy="{_fmt_vec(rpy)}"/>\n'


def emit_model(model: KinematicTreeModel) -> str:
    """Serialize a model back to the URDF subset.

    Numbers are written with the shortest round-trip representation so that
    parse(emit(m)) is structurally equal to m.
    """
    out = [f'<robot name="{model.name}">\n']
    for link in model.links:
        out.append(f'  <link name="{link.name}">\n')
        if link.inertia is not None:
            si = link.inertia
            out.append("    <inertial>\n")
            out.append(f'      <mass value="{_fmt(si.mass)}"/>\n')
            out.append(f'      <origin xyz="{_fmt_vec(si.com)}" rpy="0 0 0"/>\n')
            rot = si.inertia
            out.append(
                '      <inertia ixx="{}" iyy="{}" izz="{}" ixy="{}" ixz="{}" iyz="{}"/>\n'.format(
                    _fmt(rot[0, 0]), _fmt(rot[1, 1]), _fmt(rot[2, 2]),
                    _fmt(rot[0, 1]), _fmt(rot[0, 2]), _fmt(rot[1, 2]),
                )
            )
            out.append("    </inertial>\n")
        if link.visual is not None:
            shape = link.visual
            out.append("    <visual>\n")
            out.append(_origin_xml(shape.origin, "      "))
            out.append("      <geometry>\n")
            if shape.kind == "box":
                out.append(f'        <box size="{_fmt_vec(shape.dims)}"/>\n')
            elif shape.kind == "cylinder":
                out.append(
                    f'        <cylinder radius="{_fmt(shape.dims[0])}" length="{_fmt(shape.dims[1])}"/>\n'
                )
            else:
                out.append(f'        <sphere radius="{_fmt(shape.dims[0])}"/>\n')
            out.append("      </geometry>\n")
            out.append("    </visual>\n")
        out.append("  </link>\n")

    for joint in model.joints:
        out.append(f'  <joint name="{joint.name}" type="revolute">\n')
        out.append(_origin_xml(joint.origin, "    "))
        out.append(f'    <parent link="{joint.parent}"/>\n')
        out.append(f'    <child link="{joint.child}"/>\n')
        out.append(f'    <axis xyz="{_fmt_vec(joint.axis)}"/>\n')
        out.append(
            f'    <limit lower="{_fmt(joint.limits[0])}" upper="{_fmt(joint.limits[1])}"/>\n'
        )
        out.append("  </joint>\n")

    for sensor in model.sensors:
        out.append(f'  <sensor name="{sensor.name}" type="{sensor.kind}">\n')
        out.append(f'    <parent link="{sensor.parent_link}"/>\n')
        out.append(_origin_xml(sensor.pose, "    "))
        out.append("  </sensor>\n")

    out.append("</robot>\n")
    return "".join(out)
