"""Physical memory fragmentation profiling, synthesis and analytics."""

__version__ = "0.1.0"

from .errors import MemfragError
from .markov import (
    ClassDistribution, MemoryClass, Profile, StationaryDistribution, build_profile,
    count_transitions, load_profile, memory_weighted, save_profile, stationary,
    stationary_direct, to_profile_usage,
)
from .regions import (
    Region, RegionSequence, free_block_histogram, homogeneity_histogram,
    hugepage_feasibility, segment, usage_breakdown,
)
from .render import RenderSpec, render_memory_map
from .score import accuracy_score, class_distribution, score_report
from .snapshot import (
    PageUsage, Snapshot, classify_page, load_usage_map, parse_kpageflags, write_usage_map,
)
from .synth import (
    StartMode, SynthLayout, WalkConfig, shrink, synthesize, synthesize_partitioned,
    to_snapshot,
)
from .timeseries import (
    SnapshotSeries, change_counts, free_homogeneity_correlation, interchange_skewness,
)
