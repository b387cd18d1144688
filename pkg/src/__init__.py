"""CFFL simulator: collaborative fair federated learning with Standalone, FedAvg and DSSGD baselines."""
