# Tests for the platoon dispatching scripts
