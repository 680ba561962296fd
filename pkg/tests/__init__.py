# Tests for the kinetic Fokker-Planck toolkit
