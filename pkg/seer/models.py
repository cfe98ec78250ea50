"""Domain types shared by the services.

Request-level data is stored column-wise (one numpy array per feature)
because a desk run pushes millions of requests through the simulator; the
``Request`` dataclass is the row view used at API edges and in tests.
Locations, servers and categories are 1-based in every public signature and
0-based inside arrays.
"""

# pylint: disable=too-many-instance-attributes

from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import InvalidConfigError, ShapeMismatchError, TraceFormatError


class ContentCategory(str, Enum):
    """Channel content class of a request."""

    COMPETITIVE_GAMING = "competitive_gaming"
    ENTERTAINMENT = "entertainment"
    MOBILE_GAME = "mobile_game"
    OTHER = "other"


class Platform(str, Enum):
    """Client platform a request was issued from."""

    PC = "pc"
    WEB = "web"
    SMARTPHONE = "smartphone"
    TABLET = "tablet"


class Mode(str, Enum):
    """Seer scheduling mode."""

    CONSERVATIVE = "conservative"
    AGGRESSIVE = "aggressive"


CONTENT_CATEGORIES: tuple[ContentCategory, ...] = tuple(ContentCategory)
PLATFORMS: tuple[Platform, ...] = tuple(Platform)

# A request fits on a server when remain + CAPACITY_TOL >= cost.
CAPACITY_TOL = 1e-9


@dataclass(frozen=True)
class Request:
    """One live-streaming request (row view of a trace)."""

    cycle: int
    location: int
    content: ContentCategory
    platform: Platform
    peak: bool
    bitrate_class: int

    def __post_init__(self):
        if self.cycle < 0:
            raise ValueError(f"cycle must be >= 0, got {self.cycle}")
        if self.location < 1:
            raise ValueError(f"location must be >= 1, got {self.location}")
        if self.bitrate_class < 0:
            raise ValueError(f"bitrate_class must be >= 0, got {self.bitrate_class}")
        # Accept plain strings from callers and normalise to the enums.
        object.__setattr__(self, "content", ContentCategory(self.content))
        object.__setattr__(self, "platform", Platform(self.platform))
        object.__setattr__(self, "peak", bool(self.peak))


@dataclass(frozen=True, eq=False)
class RequestTrace:
    """Column-oriented request log grouped by cycle.

    ``content`` and ``platform`` hold indexes into ``CONTENT_CATEGORIES`` and
    ``PLATFORMS``. ``horizon`` is the number of cycles the trace spans and
    ``locations`` is M.
    """

    cycle: np.ndarray
    location: np.ndarray
    content: np.ndarray
    platform: np.ndarray
    peak: np.ndarray
    bitrate_class: np.ndarray
    horizon: int
    locations: int

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidConfigError(f"trace horizon must be >= 1, got {self.horizon}")
        if self.locations < 1:
            raise InvalidConfigError(f"trace needs at least one location, got {self.locations}")
        columns = (self.cycle, self.location, self.content, self.platform, self.peak, self.bitrate_class)
        lengths = {len(c) for c in columns}
        if len(lengths) != 1:
            raise TraceFormatError(f"trace columns differ in length: {sorted(lengths)}")
        if not len(self.cycle):
            return
        if np.any(np.diff(self.cycle) < 0):
            raise TraceFormatError("cycle indices must be non-decreasing")
        if self.cycle[0] < 0 or self.cycle[-1] >= self.horizon:
            raise TraceFormatError(f"cycle indices must lie in [0, {self.horizon})")
        if self.location.min() < 1 or self.location.max() > self.locations:
            raise TraceFormatError(f"locations must lie in [1, {self.locations}]")
        if self.content.min() < 0 or self.content.max() >= len(CONTENT_CATEGORIES):
            raise TraceFormatError("content index out of range")
        if self.platform.min() < 0 or self.platform.max() >= len(PLATFORMS):
            raise TraceFormatError("platform index out of range")
        if self.bitrate_class.min() < 0:
            raise TraceFormatError("bitrate_class must be >= 0")

    @classmethod
    def from_requests(
        cls,
        requests: Iterable[Request],
        horizon: int | None = None,
        locations: int | None = None,
    ) -> "RequestTrace":
        """Build a trace from row objects, inferring horizon/M when omitted."""
        rows = list(requests)
        content_index = {c: n for n, c in enumerate(CONTENT_CATEGORIES)}
        platform_index = {p: n for n, p in enumerate(PLATFORMS)}
        cycle = np.array([r.cycle for r in rows], dtype=np.int64)
        location = np.array([r.location for r in rows], dtype=np.int64)
        if horizon is None:
            horizon = int(cycle.max()) + 1 if rows else 1
        if locations is None:
            locations = int(location.max()) if rows else 1
        return cls(
            cycle=cycle,
            location=location,
            content=np.array([content_index[r.content] for r in rows], dtype=np.int64),
            platform=np.array([platform_index[r.platform] for r in rows], dtype=np.int64),
            peak=np.array([r.peak for r in rows], dtype=bool),
            bitrate_class=np.array([r.bitrate_class for r in rows], dtype=np.int64),
            horizon=horizon,
            locations=locations,
        )

    def __len__(self) -> int:
        return len(self.cycle)

    def __iter__(self) -> Iterator[Request]:
        for n in range(len(self)):
            yield self.request(n)

    def request(self, n: int) -> Request:
        """Row view of the n-th request."""
        return Request(
            cycle=int(self.cycle[n]),
            location=int(self.location[n]),
            content=CONTENT_CATEGORIES[int(self.content[n])],
            platform=PLATFORMS[int(self.platform[n])],
            peak=bool(self.peak[n]),
            bitrate_class=int(self.bitrate_class[n]),
        )

    def take(self, index) -> "RequestTrace":
        return replace(
            self,
            cycle=self.cycle[index],
            location=self.location[index],
            content=self.content[index],
            platform=self.platform[index],
            peak=self.peak[index],
            bitrate_class=self.bitrate_class[index],
        )

    def for_cycle(self, cycle: int) -> "RequestTrace":
        """The requests of a single cycle (same horizon and M)."""
        lo = np.searchsorted(self.cycle, cycle, side="left")
        hi = np.searchsorted(self.cycle, cycle, side="right")
        return self.take(slice(lo, hi))

    def head(self, cycles: int) -> "RequestTrace":
        """The requests of cycles ``[0, cycles)``."""
        hi = np.searchsorted(self.cycle, cycles, side="left")
        return self.take(slice(0, hi))


@dataclass(frozen=True, eq=False)
class RequestMatrix:
    """Per-location, per-category request counts for one cycle (M x N).

    Forecasts are real-valued until ``rounded()`` turns them into counts.
    """

    counts: np.ndarray
    cycle: int = 0

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ShapeMismatchError(f"request matrix must be 2-D, got shape {counts.shape}")
        if not np.all(np.isfinite(counts)):
            raise ValueError("request matrix entries must be finite")
        if np.any(counts < 0):
            raise ValueError("request matrix entries must be >= 0")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def zeros(cls, locations: int, categories: int, cycle: int = 0) -> "RequestMatrix":
        return cls(np.zeros((locations, categories), dtype=np.int64), cycle)

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    @property
    def locations(self) -> int:
        return self.counts.shape[0]

    @property
    def categories(self) -> int:
        return self.counts.shape[1]

    @property
    def total(self) -> float:
        return self.counts.sum().item()

    @property
    def is_integral(self) -> bool:
        return np.issubdtype(self.counts.dtype, np.integer)

    def rounded(self) -> "RequestMatrix":
        """Nearest-integer counts (halves round up)."""
        if self.is_integral:
            return self
        return RequestMatrix(np.floor(self.counts + 0.5).astype(np.int64), self.cycle)

    def category_totals(self) -> np.ndarray:
        """r̄_i: requests per category summed over locations."""
        return self.counts.sum(axis=0)

    def location_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


@dataclass(frozen=True)
class Server:
    """One edge server: dense 1-based id, capacity B_e, location L_e."""

    id: int
    bandwidth: float
    location: int
    active: bool = True


def line_distances(server_locations: np.ndarray, locations: int) -> np.ndarray:
    """Default distance model: |L_e - m| on a line of locations."""
    columns = np.arange(1, locations + 1)
    return np.abs(np.asarray(server_locations)[:, None] - columns[None, :]).astype(float)


@dataclass(frozen=True, eq=False)
class ServerFleet:
    """Servers plus the (E x M) server-to-location distance matrix."""

    servers: tuple[Server, ...]
    distances: np.ndarray

    def __post_init__(self):
        if not self.servers:
            raise InvalidConfigError("fleet must contain at least one server")
        ids = [s.id for s in self.servers]
        if ids != list(range(1, len(ids) + 1)):
            raise InvalidConfigError("server ids must be dense, unique and ordered from 1")
        if any(not s.bandwidth > 0 for s in self.servers):
            raise InvalidConfigError("server bandwidth must be > 0")
        distances = np.asarray(self.distances, dtype=float)
        if distances.ndim != 2 or distances.shape[0] != len(self.servers):
            raise ShapeMismatchError(
                f"distance matrix must be E x M with E={len(self.servers)}, got {distances.shape}"
            )
        if any(not 1 <= s.location <= distances.shape[1] for s in self.servers):
            raise InvalidConfigError("server locations must lie in [1, M]")
        object.__setattr__(self, "distances", distances)

    @classmethod
    def from_arrays(
        cls,
        bandwidth,
        server_locations,
        locations: int,
        distances: np.ndarray | None = None,
        active=None,
    ) -> "ServerFleet":
        bandwidth = np.asarray(bandwidth, dtype=float)
        server_locations = np.asarray(server_locations, dtype=np.int64)
        if active is None:
            active = np.ones(len(bandwidth), dtype=bool)
        servers = tuple(
            Server(id=n + 1, bandwidth=float(b), location=int(loc), active=bool(a))
            for n, (b, loc, a) in enumerate(zip(bandwidth, server_locations, active))
        )
        if distances is None:
            distances = line_distances(server_locations, locations)
        return cls(servers=servers, distances=distances)

    @property
    def size(self) -> int:
        return len(self.servers)

    @property
    def locations(self) -> int:
        return self.distances.shape[1]

    @property
    def bandwidth(self) -> np.ndarray:
        return np.array([s.bandwidth for s in self.servers])

    @property
    def server_locations(self) -> np.ndarray:
        return np.array([s.location for s in self.servers], dtype=np.int64)

    @property
    def active(self) -> np.ndarray:
        return np.array([s.active for s in self.servers], dtype=bool)

    def with_active(self, active) -> "ServerFleet":
        """Copy of the fleet with new active flags."""
        servers = tuple(replace(s, active=bool(a)) for s, a in zip(self.servers, active))
        return replace(self, servers=servers)


@dataclass(frozen=True, eq=False)
class RevenueMatrix:
    """A[e][m][i]: expected per-minute throughput of one request (E x M x N)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3:
            raise ShapeMismatchError(f"revenue matrix must be E x M x N, got {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("revenue matrix entries must be finite and >= 0")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def averaged(self) -> np.ndarray:
        """Ā (E x N): mean over the location axis."""
        return self.values.mean(axis=1)


@dataclass(frozen=True)
class RevenueCurveParams:
    """Utilization thresholds α (withdrawal), β (QoS) and penalty γ."""

    alpha: float = 0.05
    beta: float = 0.8
    gamma_factor: float = 0.2

    def __post_init__(self):
        if not 0 <= self.alpha < self.beta <= 1:
            raise InvalidConfigError(
                f"thresholds must satisfy 0 <= alpha < beta <= 1, got alpha={self.alpha}, beta={self.beta}"
            )
        if not 0 <= self.gamma_factor <= 1:
            raise InvalidConfigError(f"gamma_factor must lie in [0, 1], got {self.gamma_factor}")

    def with_beta(self, beta: float) -> "RevenueCurveParams":
        return replace(self, beta=beta)


@dataclass(frozen=True, eq=False)
class PreScheduleStrategy:
    """PS: planned request counts x[e][m][i] for one cycle."""

    x: np.ndarray
    cycle: int = 0
    fallback: bool = False
    objective: float = 0.0
    solve_ms: float = 0.0
    lp_utilization: np.ndarray | None = None
    utilization_slack: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x)
        if x.ndim != 3:
            raise ShapeMismatchError(f"strategy must be E x M x N, got {x.shape}")
        if not np.issubdtype(x.dtype, np.integer) or np.any(x < 0):
            raise ValueError("strategy entries must be non-negative integers")
        object.__setattr__(self, "x", x)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.x.shape


@dataclass(frozen=True)
class ServerState:
    """Snapshot of one server inside a cycle."""

    id: int
    load: float
    remain: float
    utilization: float
    discarded: bool
    withdrawal_risk: bool


@dataclass(eq=False)
class FleetState:
    """Mutable per-cycle load bookkeeping for the whole fleet."""

    bandwidth: np.ndarray
    load: np.ndarray
    active: np.ndarray
    discarded: np.ndarray

    @classmethod
    def fresh(cls, fleet: ServerFleet) -> "FleetState":
        size = fleet.size
        return cls(
            bandwidth=fleet.bandwidth,
            load=np.zeros(size),
            active=fleet.active,
            discarded=np.zeros(size, dtype=bool),
        )

    @property
    def remain(self) -> np.ndarray:
        """B_e^remain = B_e - load_e."""
        return self.bandwidth - self.load

    @property
    def utilization(self) -> np.ndarray:
        return self.load / self.bandwidth

    @property
    def eligible(self) -> np.ndarray:
        """Servers that may take new requests this cycle."""
        return self.active & ~self.discarded

    def server(self, e: int, alpha: float = 0.0) -> ServerState:
        """Snapshot for 1-based server ``e``."""
        n = e - 1
        utilization = float(self.load[n] / self.bandwidth[n])
        return ServerState(
            id=e,
            load=float(self.load[n]),
            remain=float(self.bandwidth[n] - self.load[n]),
            utilization=utilization,
            discarded=bool(self.discarded[n]),
            withdrawal_risk=bool(self.active[n] and utilization < alpha),
        )

    def servers(self, alpha: float = 0.0) -> list[ServerState]:
        return [self.server(e, alpha) for e in range(1, len(self.bandwidth) + 1)]


@dataclass(eq=False)
class ScheduleAssignment:
    """S: realised request counts per stage, plus the unserved remainder.

    ``matched`` holds execution-stage placements (or a baseline's single-shot
    placements), ``reallocated`` requests moved off discarded servers,
    ``rescheduled`` leftovers placed by the heuristic. ``leftover`` records
    what matching could not place; ``dropped`` what no stage could place.
    """

    matched: np.ndarray
    reallocated: np.ndarray
    rescheduled: np.ndarray
    dropped: np.ndarray
    leftover: np.ndarray
    discarded: np.ndarray
    single_stage: bool = False

    @classmethod
    def empty(cls, servers: int, locations: int, categories: int, single_stage: bool = False):
        shape = (servers, locations, categories)
        return cls(
            matched=np.zeros(shape, dtype=np.int64),
            reallocated=np.zeros(shape, dtype=np.int64),
            rescheduled=np.zeros(shape, dtype=np.int64),
            dropped=np.zeros((locations, categories), dtype=np.int64),
            leftover=np.zeros((locations, categories), dtype=np.int64),
            discarded=np.zeros(servers, dtype=bool),
            single_stage=single_stage,
        )

    @property
    def s(self) -> np.ndarray:
        """Total placements per (e, m, i) across stages."""
        return self.matched + self.reallocated + self.rescheduled

    @property
    def assigned_total(self) -> int:
        return int(self.s.sum())

    @property
    def dropped_total(self) -> int:
        return int(self.dropped.sum())

    @property
    def leftover_total(self) -> int:
        return int(self.leftover.sum())

    def leftover_requests(self) -> Iterator[tuple[int, int]]:
        """Unmatched requests as 1-based (m, i) pairs in arrival order."""
        for (m, i), count in np.ndenumerate(self.leftover):
            for _ in range(int(count)):
                yield m + 1, i + 1


@dataclass(frozen=True)
class CycleMetrics:
    """Everything recorded about one simulated cycle."""

    cycle: int
    utilization: tuple[float, ...]
    revenue: float
    mean_utilization: float
    withdrawal_events: int
    sla_violations: int
    active_servers: int
    total_requests: int
    matched: int
    reallocated: int
    rescheduled: int
    dropped: int
    leftovers: int
    discarded_servers: int
    beta: float
    fallback: bool
    preschedule_ms: float = 0.0
    in_cycle_ms: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def withdrawal_rate(self) -> float:
        return self.withdrawal_events / self.active_servers if self.active_servers else 0.0

    @property
    def sla_rate(self) -> float:
        return self.sla_violations / self.active_servers if self.active_servers else 0.0
