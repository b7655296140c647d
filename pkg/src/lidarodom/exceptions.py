"""Exception hierarchy shared by every stage of the odometry pipeline."""


class LidarOdomError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateGeometry(LidarOdomError):
    """Correspondences do not constrain a rigid transform."""


class TooFewPoints(LidarOdomError):
    """A cloud is too small for the requested operation."""


class EmptyCloud(TooFewPoints):
    """An operation that needs at least one point got none."""


class BelowMinPoints(TooFewPoints):
    """A conditioned scan fell below the registration operating envelope."""

    def __init__(self, count, min_points):
        super().__init__(f"{count} points after preprocessing, need >= {min_points}")
        self.count = count
        self.min_points = min_points


class AnomalousScan(LidarOdomError):
    """Point counts of consecutive scans differ too much."""

    def __init__(self, previous_count, current_count):
        super().__init__(f"point count jumped from {previous_count} to {current_count}")
        self.previous_count = previous_count
        self.current_count = current_count


class NoUsableDescriptors(LidarOdomError):
    """No point carries a usable feature descriptor."""


class TooFewCorrespondences(LidarOdomError):
    pass


class NoConsensus(LidarOdomError):
    """RANSAC could not find three mutually consistent correspondences."""


class NoOverlap(LidarOdomError):
    """ICP found no closest-point pair within the correspondence distance."""


class DimensionMismatch(LidarOdomError):
    pass


class LowConfidence(LidarOdomError):
    """Planar matching peak below the acceptance threshold."""

    def __init__(self, peak, min_peak):
        super().__init__(f"correlation peak {peak:.3f} below {min_peak:.3f}")
        self.peak = peak
        self.min_peak = min_peak


class NmeaError(LidarOdomError, ValueError):
    pass


class BadChecksum(NmeaError):
    pass


class NotGga(NmeaError):
    pass


class MalformedField(NmeaError):
    def __init__(self, index, value=""):
        super().__init__(f"malformed NMEA field {index}: {value!r}")
        self.index = index


class EmptyTrajectory(LidarOdomError):
    pass


class NoTemporalOverlap(LidarOdomError):
    pass


class DatasetNotFound(LidarOdomError):
    pass


class FormatError(LidarOdomError):
    """A data file could not be parsed; carries the file and 1-based line."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line
