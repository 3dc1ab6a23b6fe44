#ifndef EFMCA_EFMCA_HPP
#define EFMCA_EFMCA_HPP

#include "efmca/em.hpp"
#include "efmca/errors.hpp"
#include "efmca/expfam.hpp"
#include "efmca/io.hpp"
#include "efmca/latent.hpp"
#include "efmca/model.hpp"
#include "efmca/numeric.hpp"
#include "efmca/params.hpp"
#include "efmca/tasks/bars.hpp"
#include "efmca/tasks/denoise.hpp"
#include "efmca/tasks/image.hpp"
#include "efmca/tasks/noise_select.hpp"
#include "efmca/trace.hpp"
#include "efmca/tvem.hpp"

#endif  // EFMCA_EFMCA_HPP
