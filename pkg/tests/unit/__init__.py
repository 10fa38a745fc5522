# Tests for G2D2
