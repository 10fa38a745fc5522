# Experiment configuration, runner and verification suites
