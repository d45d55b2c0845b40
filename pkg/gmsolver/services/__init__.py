# GM Solver - Services
