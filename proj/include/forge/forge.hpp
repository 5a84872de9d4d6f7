#pragma once

#include "forge/clip_io.hpp"
#include "forge/contact.hpp"
#include "forge/error.hpp"
#include "forge/evalstats.hpp"
#include "forge/latent.hpp"
#include "forge/motion.hpp"
#include "forge/parallel.hpp"
#include "forge/pipeline.hpp"
#include "forge/plausibility.hpp"
#include "forge/qc.hpp"
#include "forge/refine.hpp"
#include "forge/rng.hpp"
#include "forge/synth.hpp"
#include "forge/track.hpp"
