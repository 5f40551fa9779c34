"""
mixline - mixture-distribution forecasts for forecast hubs.

Modules:
    distributions    component families and finite mixtures
    representations  bin, quantile and sample forecasts
    scoring          log score, CRPS, interval scores, KS statistic
    ensemble         model averaging and weight estimation
    fitting          normal-mixture fits to bins, quantiles and samples
    formats          hub submission and truth files
"""

__version__ = "0.1.0"
