"""SupportNetworks: how gradient descent and SGD cut irrelevant inputs out of deep linear, diagonal and ReLU networks."""

import supportnetworks.linalg
import supportnetworks.datagen
import supportnetworks.network
import supportnetworks.optim
import supportnetworks.oracle
import supportnetworks.insight
import supportnetworks.config
import supportnetworks.runner
import supportnetworks.suites
import supportnetworks.plotting
import supportnetworks.cli
