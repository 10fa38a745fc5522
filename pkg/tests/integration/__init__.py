# Integration tests for G2D2
