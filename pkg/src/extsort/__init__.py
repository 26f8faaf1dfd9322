"""External sorting of 100-byte records with 10-byte keys."""

from .errors import (BudgetExhaustedError, ConfigurationError, DataIntegrityError,
                     InternalInvariantError, MalformedInputError, SortError, StageError,
                     UsageError)
from .genval import GenSpec, ValidationReport, generate, validate
from .merge import merge_partition
from .pipeline import (SortConfig, SortPlan, execute_external, form_runs, locate_partitions,
                       plan, sample_splitters, sort_file, sort_internal)
from .radix import RadixConfig, msd_radix_sort
from .records import KEY_SIZE, RECORD_SIZE, KeyRef, MultisetChecksum, Record, multiset_checksum
from .report import TimingBreakdown

__version__ = "0.1.0"
