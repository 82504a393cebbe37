"""
Image + command -> world-frame targets and obstacles.

Two stages. A language model splits the operator's command into a target
phrase and an obstacle phrase; a pointing VLM is then asked once per phrase and
answers with point markup whose x/y attributes are percentages of the image
size, e.g.::

    <point x="45.2" y="61.0" alt="blue barrel">blue barrel</point>
    <points x1="10.0" y1="20.0" x2="30.5" y2="40.0" alt="stands">stands</points>

The points are normalized and projected to the ground plane with
:func:`vlrr.geo.pixel_to_world`.

Backends implement two blocking calls, ``goal_reply(text) -> str`` (a JSON
object with "targets" and "obstacles" keys) and
``point_reply(image, phrase, which) -> str``. :class:`MockBackend` synthesizes
both from a scene fixture; :class:`HttpBackend` talks to live endpoints.
"""

from __future__ import annotations

import base64
import json
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from vlrr.geo import CameraMeta, PixelPoint, WorldPoint, pixel_to_world, world_to_pixel

GOAL_SYSTEM_PROMPT = (
    "You plan drone missions. From the operator's instruction, extract the objects the drone "
    "must fly to and the objects it must avoid. Reply with a JSON object with exactly two string "
    'fields: "targets" (a short noun phrase naming the target objects) and "obstacles" (a short '
    'noun phrase naming the obstacles, or "" if none are mentioned).'
)
POINT_PROMPT = "Point to the {phrase}."

_IMAGE_MAGIC = (b"\x89PNG\r\n\x1a\n", b"\xff\xd8\xff", b"GIF87a", b"GIF89a", b"BM", b"RIFF")


class VisionLanguageError(RuntimeError):
    """Base class; ``raw`` holds the offending payload when there is one."""

    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


class ExtractionError(VisionLanguageError):
    pass


class EmptyDetectionError(VisionLanguageError):
    pass


class MalformedReplyError(VisionLanguageError):
    pass


class MissionPlanningError(VisionLanguageError):
    pass


class FixtureError(VisionLanguageError):
    pass


@dataclass(frozen=True)
class MissionCommand:
    text: str
    image_ref: str | Path | bytes

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("mission command text is empty")
        data = self.image_bytes()
        if not data.startswith(_IMAGE_MAGIC):
            raise ValueError("image payload is not a recognised image format")

    def image_bytes(self) -> bytes:
        if isinstance(self.image_ref, bytes):
            return self.image_ref
        try:
            return Path(self.image_ref).read_bytes()
        except OSError as exc:
            raise ValueError(f"cannot read image {self.image_ref}: {exc}") from exc


@dataclass(frozen=True)
class GoalSpec:
    target_phrase: str
    obstacle_phrase: str = ""

    def __post_init__(self):
        if not self.target_phrase.strip():
            raise ValueError("target phrase is empty")


@dataclass(frozen=True)
class DetectionSet:
    targets: tuple[PixelPoint, ...]
    obstacles: tuple[PixelPoint, ...] = ()


@dataclass
class PlanResult:
    targets: list[WorldPoint]
    obstacles: list[WorldPoint]
    detections: DetectionSet
    goals: GoalSpec
    latency_s: float = 0.0
    raw_replies: dict[str, str] = field(default_factory=dict)


class Backend(Protocol):
    def goal_reply(self, text: str) -> str: ...

    def point_reply(self, image: bytes, phrase: str, which: str) -> str: ...


# -- goal extraction ---------------------------------------------------------------------

_SENTENCE = re.compile(r"[^.!?;]+")
_AVOID = re.compile(r"^\s*(?:and\s+|but\s+|please\s+)*(?:avoid|stay\s+away\s+from|keep\s+clear\s+of|"
                    r"do\s+not\s+hit|don't\s+hit)\s+", re.I)
_PART_OF = re.compile(r"^(?:(?:all|each|every|any|the|\w+)\s+)?(?:legs?|parts?|sides?|bases?)\s+of\s+", re.I)
_TARGET_VERB = re.compile(
    r"^\s*(?:please\s+)?(?:(?:fly|go|navigate|move|head)\s+(?:around|to|over|towards?|above)\s*"
    r"(?:(?:each|all|every)\s+(?:of\s+)?(?:the\s+)?)?|(?:visit|inspect|find|reach|check)\s+)", re.I)
_ARTICLE = re.compile(r"^(?:the|a|an)\s+", re.I)


def split_goals(text: str) -> GoalSpec:
    """Rule-based split of a command into target and obstacle phrases."""
    targets, obstacles = [], []
    for sentence in _SENTENCE.findall(text):
        s = sentence.strip()
        if not s:
            continue
        m = _AVOID.match(s)
        if m:
            obstacles.append(_ARTICLE.sub("", _PART_OF.sub("", s[m.end():]).strip()))
        else:
            targets.append(_ARTICLE.sub("", _TARGET_VERB.sub("", s).strip()))
    targets = [t for t in targets if t]
    if not targets:
        raise ExtractionError("no target clause found in command", raw=text)
    return GoalSpec(" and ".join(targets), " and ".join(o for o in obstacles if o))


def extract_goals(cmd: MissionCommand, backend: Backend) -> GoalSpec:
    raw = backend.goal_reply(cmd.text)
    try:
        reply = json.loads(raw)
        targets = str(reply["targets"]).strip()
        obstacles = str(reply.get("obstacles") or "").strip()
    except (json.JSONDecodeError, TypeError, KeyError) as exc:
        raise ExtractionError(f"unparseable goal reply: {exc}", raw=raw) from exc
    if not targets:
        raise ExtractionError("goal reply has an empty target phrase", raw=raw)
    return GoalSpec(targets, obstacles)


# -- point parsing -----------------------------------------------------------------------

_TAG = re.compile(r"<points?\b([^>]*)>", re.I)
_ATTR = re.compile(r'([A-Za-z_]\w*)\s*=\s*"([^"]*)"')


def parse_points(raw: str, which: str = "targets", *, allow_empty: bool = False) -> list[PixelPoint]:
    """Extract all point annotations from a VLM reply, in reply order.

    Raises:
        EmptyDetectionError: no points and ``allow_empty`` is false.
        MalformedReplyError: a coordinate is unparseable or outside [0, 100] percent.
    """
    if not raw or not raw.strip():
        raise EmptyDetectionError(f"empty reply for {which}", raw=raw)
    out: list[PixelPoint] = []
    for tag in _TAG.finditer(raw):
        attrs = dict(_ATTR.findall(tag.group(1)))
        pairs = []
        if "x" in attrs or "y" in attrs:
            pairs.append((attrs.get("x"), attrs.get("y")))
        idx = sorted(int(k[1:]) for k in attrs if re.fullmatch(r"x\d+", k))
        pairs.extend((attrs.get(f"x{i}"), attrs.get(f"y{i}")) for i in idx)
        for xs, ys in pairs:
            try:
                x, y = float(xs), float(ys)
            except (TypeError, ValueError) as exc:
                raise MalformedReplyError(f"bad coordinate pair ({xs}, {ys}) for {which}",
                                          raw=raw) from exc
            if not (0.0 <= x <= 100.0 and 0.0 <= y <= 100.0):
                raise MalformedReplyError(f"coordinate ({x}, {y}) outside 0-100% for {which}", raw=raw)
            out.append(PixelPoint(x / 100.0, y / 100.0))
    if not out and not allow_empty:
        raise EmptyDetectionError(f"no points found for {which}", raw=raw)
    return out


def format_points(points: list[PixelPoint], phrase: str) -> str:
    """Render normalized points in the percent point markup the parser reads."""
    if not points:
        return "There are none."
    if len(points) == 1:
        p = points[0]
        return f'<point x="{100 * p.nx:.10f}" y="{100 * p.ny:.10f}" alt="{phrase}">{phrase}</point>'
    coords = " ".join(f'x{i}="{100 * p.nx:.10f}" y{i}="{100 * p.ny:.10f}"'
                      for i, p in enumerate(points, start=1))
    return f'<points {coords} alt="{phrase}">{phrase}</points>'


# -- pipeline ----------------------------------------------------------------------------

def plan_detections(cmd: MissionCommand, meta: CameraMeta, backend: Backend) -> PlanResult:
    """Goal extraction, one pointing query per phrase, projection to the ground plane.

    Target order in the reply is kept as the visit order.
    """
    t0 = time.perf_counter()
    goals = extract_goals(cmd, backend)
    image = cmd.image_bytes()
    with ThreadPoolExecutor(max_workers=2) as pool:
        fut_t = pool.submit(backend.point_reply, image, goals.target_phrase, "targets")
        fut_o = (pool.submit(backend.point_reply, image, goals.obstacle_phrase, "obstacles")
                 if goals.obstacle_phrase else None)
        raw_t = fut_t.result()
        raw_o = fut_o.result() if fut_o is not None else ""
    try:
        px_t = parse_points(raw_t, "targets", allow_empty=True)
    except EmptyDetectionError:
        px_t = []
    if not px_t:
        raise MissionPlanningError("no target points detected", raw=raw_t)
    px_o = parse_points(raw_o, "obstacles", allow_empty=True) if raw_o else []
    return PlanResult(
        targets=[pixel_to_world(p, meta) for p in px_t],
        obstacles=[pixel_to_world(p, meta) for p in px_o],
        detections=DetectionSet(tuple(px_t), tuple(px_o)),
        goals=goals,
        latency_s=time.perf_counter() - t0,
        raw_replies={"targets": raw_t, "obstacles": raw_o},
    )


# -- backends ----------------------------------------------------------------------------

class MockBackend:
    """Deterministic stand-in driven by a scene's stored multimodal coordinates.

    Goal extraction uses :func:`split_goals`; pointing replies are built by
    projecting the stored world coordinates back into the image. Stateless.
    """

    def __init__(self, scene):
        if scene.multimodal_targets is None:
            raise FixtureError(f"scene {scene.name!r} has no multimodal target annotations")
        self.camera = scene.camera
        self._points = {
            "targets": [world_to_pixel(w, scene.camera) for w in scene.multimodal_targets],
            "obstacles": [world_to_pixel(w, scene.camera) for w in (scene.multimodal_obstacles or ())],
        }

    def goal_reply(self, text: str) -> str:
        g = split_goals(text)
        return json.dumps({"targets": g.target_phrase, "obstacles": g.obstacle_phrase})

    def point_reply(self, image: bytes, phrase: str, which: str) -> str:
        if which not in self._points:
            raise ValueError(f"which must be 'targets' or 'obstacles', got {which!r}")
        return format_points(self._points[which], phrase)


def mock_backend(scene) -> MockBackend:
    return MockBackend(scene)


class HttpBackend:
    """Live endpoints: a chat-completion style LLM and an image+prompt VLM.

    LLM request body (OpenAI-compatible)::

        {"model": ..., "messages": [{"role": "system", ...}, {"role": "user", "content": text}],
         "response_format": {"type": "json_object"}, "temperature": 0}

    and the goal JSON is read from ``choices[0].message.content``. VLM request body::

        {"model": ..., "prompt": "Point to the <phrase>.", "image": "<base64>"}

    and the markup is read from the ``text`` field of the reply.
    """

    ENV = {
        "llm_url": "VLRR_LLM_URL",
        "llm_model": "VLRR_LLM_MODEL",
        "vlm_url": "VLRR_VLM_URL",
        "vlm_model": "VLRR_VLM_MODEL",
        "api_key": "VLRR_API_KEY",
    }

    def __init__(self, llm_url: str, vlm_url: str, *, api_key: str | None = None,
                 llm_model: str = "gpt-4o", vlm_model: str = "molmo-7b-d", timeout: float = 60.0,
                 session=None):
        self.llm_url = llm_url
        self.vlm_url = vlm_url
        self.api_key = api_key
        self.llm_model = llm_model
        self.vlm_model = vlm_model
        self.timeout = timeout
        if session is None:
            import requests
            session = requests.Session()
        self.session = session

    @classmethod
    def from_env(cls, environ=None, **kw) -> "HttpBackend":
        env = os.environ if environ is None else environ
        missing = [v for k, v in cls.ENV.items() if k.endswith("url") and not env.get(v)]
        if missing:
            raise ExtractionError(f"live backend not configured; set {', '.join(missing)}")
        opts = {k: env[v] for k, v in cls.ENV.items() if env.get(v)}
        opts.update(kw)
        return cls(opts.pop("llm_url"), opts.pop("vlm_url"), **opts)

    def _headers(self) -> dict:
        h = {"Content-Type": "application/json"}
        if self.api_key:
            h["Authorization"] = f"Bearer {self.api_key}"
        return h

    def _post(self, url: str, body: dict) -> dict:
        try:
            resp = self.session.post(url, json=body, headers=self._headers(), timeout=self.timeout)
            text = resp.text
        except Exception as exc:  # transport errors from whichever HTTP client is injected
            raise ExtractionError(f"request to {url} failed: {exc}") from exc
        if resp.status_code != 200:
            raise ExtractionError(f"{url} returned HTTP {resp.status_code}", raw=text)
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ExtractionError(f"{url} returned non-JSON body", raw=text) from exc

    def goal_reply(self, text: str) -> str:
        body = {
            "model": self.llm_model,
            "messages": [{"role": "system", "content": GOAL_SYSTEM_PROMPT},
                         {"role": "user", "content": text}],
            "response_format": {"type": "json_object"},
            "temperature": 0,
        }
        reply = self._post(self.llm_url, body)
        try:
            return reply["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ExtractionError("unexpected LLM reply shape", raw=json.dumps(reply)) from exc

    def point_reply(self, image: bytes, phrase: str, which: str) -> str:
        body = {"model": self.vlm_model, "prompt": POINT_PROMPT.format(phrase=phrase),
                "image": base64.b64encode(image).decode("ascii")}
        reply = self._post(self.vlm_url, body)
        if not isinstance(reply, dict) or not isinstance(reply.get("text"), str):
            raise ExtractionError("unexpected VLM reply shape", raw=json.dumps(reply))
        return reply["text"]
