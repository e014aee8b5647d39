"""Heterogeneous differential-privacy data market: mechanisms, payments and private fitting."""
