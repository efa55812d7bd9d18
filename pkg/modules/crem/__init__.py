"""CREM simulation pipeline: speed functions, trees, fields, sums, oracles, statistics."""
