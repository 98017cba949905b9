# SCKD-Discovery Source Package
