/*=========================================================================
 *
 *  Copyright PETNav contributors
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *         https://www.apache.org/licenses/LICENSE-2.0.txt
 *
 *  Unless required by applicable law or agreed to in writing, software
 *  distributed under the License is distributed on an "AS IS" BASIS,
 *  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 *  See the License for the specific language governing permissions and
 *  limitations under the License.
 *
 *=========================================================================*/
#include "petnav/intensity_registration.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace petnav
{

void
RegistrationConfig::validate() const
{
  auto check = [](bool ok, const char * what) {
    if (!ok)
      throw RegistrationError(RegistrationError::Kind::InvalidConfig, std::string("invalid registration config: ") + what);
  };
  check(bins >= 2, "bins must be >= 2");
  check(sample_stride >= 1, "sample_stride must be >= 1");
  check(min_overlap_fraction > 0.0 && min_overlap_fraction <= 1.0, "min_overlap_fraction must lie in (0,1]");
  check(pyramid_levels >= 1, "pyramid_levels must be >= 1");
  check(max_sweeps_per_level >= 1, "max_sweeps_per_level must be >= 1");
  check(translation_bracket_mm > 0.0 && rotation_bracket_rad > 0.0, "brackets must be positive");
  check(translation_tolerance_mm > 0.0 && rotation_tolerance_rad > 0.0, "tolerances must be positive");
  check(grid_spacing_voxels > 0.0, "grid_spacing_voxels must be positive");
  check(bspline_sample_stride >= 1, "bspline_sample_stride must be >= 1");
  check(bspline_iterations >= 1, "bspline_iterations must be >= 1");
  check(bspline_initial_step_mm > 0.0 && bspline_min_step_mm > 0.0, "B-spline steps must be positive");
  check(bspline_fd_step_mm > 0.0, "bspline_fd_step_mm must be positive");
}

JointHistogram::JointHistogram(int nbins, std::pair<double, double> frange, std::pair<double, double> mrange)
  : bins(nbins)
  , counts(static_cast<std::size_t>(nbins) * nbins, 0.0)
  , fixed_range(frange)
  , moving_range(mrange)
{}

JointHistogram
JointHistogram::transposed() const
{
  JointHistogram t(bins, moving_range, fixed_range);
  for (int f = 0; f < bins; ++f)
    for (int m = 0; m < bins; ++m)
      t.at(m, f) = at(f, m);
  t.n_samples = n_samples;
  t.n_drawn = n_drawn;
  t.n_outside = n_outside;
  return t;
}

std::vector<double>
JointHistogram::fixed_marginal() const
{
  std::vector<double> out(bins, 0.0);
  for (int f = 0; f < bins; ++f)
    for (int m = 0; m < bins; ++m)
      out[f] += at(f, m);
  return out;
}

std::vector<double>
JointHistogram::moving_marginal() const
{
  std::vector<double> out(bins, 0.0);
  for (int f = 0; f < bins; ++f)
    for (int m = 0; m < bins; ++m)
      out[m] += at(f, m);
  return out;
}

std::optional<Vec3>
SpatialMapping::map(const Vec3 & p) const
{
  const Vec3 q = rigid.apply(p);
  if (!grid)
    return q;
  std::array<std::size_t, 3>           first{};
  std::array<std::array<double, 4>, 3> w{};
  if (!grid->support(q, first, w))
    return std::nullopt;
  return q + bspline_displacement(*grid, q);
}

double
entropy_bits(const std::vector<double> & weights)
{
  double total = 0.0;
  for (double w : weights)
    total += w;
  if (!(total > 0.0))
    return 0.0;
  double h = 0.0;
  for (double w : weights)
  {
    if (w > 0.0)
    {
      const double p = w / total;
      h -= p * std::log2(p);
    }
  }
  return h;
}

double
mutual_information(const JointHistogram & h)
{
  if (!(h.n_samples > 0.0))
    throw RegistrationError(RegistrationError::Kind::EmptyOverlap, "mutual information of an empty histogram");

  // Normalize by the table's own mass so fractional accumulation round-off cancels.
  double total = 0.0;
  for (double c : h.counts)
    total += c;
  if (!(total > 0.0))
    throw RegistrationError(RegistrationError::Kind::EmptyOverlap, "mutual information of an empty histogram");

  const auto pf = h.fixed_marginal();
  const auto pm = h.moving_marginal();
  double     mi = 0.0;
  for (int f = 0; f < h.bins; ++f)
  {
    if (!(pf[f] > 0.0))
      continue;
    for (int m = 0; m < h.bins; ++m)
    {
      const double c = h.at(f, m);
      if (c > 0.0)
        mi += c * std::log2(c * total / (pf[f] * pm[m]));
    }
  }
  return std::max(0.0, mi / total);
}

namespace
{

constexpr double kRejected = -std::numeric_limits<double>::infinity();

struct BinMapper
{
  double lo = 0.0;
  double scale = 0.0;
  double last = 0.0;

  BinMapper(std::pair<double, double> range, int bins)
    : lo(range.first)
    , last(static_cast<double>(bins - 1))
  {
    const double span = range.second - range.first;
    scale = span > 0.0 ? last / span : 0.0;
  }

  double
  position(double v) const noexcept
  {
    return std::clamp((v - lo) * scale, 0.0, last);
  }
};

inline void
accumulate(JointHistogram & h, double fpos, double mpos, BinAccumulation mode, double weight)
{
  if (mode == BinAccumulation::Nearest)
  {
    const int f = static_cast<int>(std::floor(fpos + 0.5));
    const int m = static_cast<int>(std::floor(mpos + 0.5));
    h.at(f, m) += weight;
  }
  else
  {
    const int    last = h.bins - 1;
    int          f0 = static_cast<int>(std::floor(fpos));
    int          m0 = static_cast<int>(std::floor(mpos));
    f0 = std::min(f0, last - 1);
    m0 = std::min(m0, last - 1);
    const double ff = fpos - f0;
    const double mf = mpos - m0;
    h.at(f0, m0) += weight * (1.0 - ff) * (1.0 - mf);
    h.at(f0, m0 + 1) += weight * (1.0 - ff) * mf;
    h.at(f0 + 1, m0) += weight * ff * (1.0 - mf);
    h.at(f0 + 1, m0 + 1) += weight * ff * mf;
  }
  h.n_samples += weight;
}

Mat3
world_to_index_matrix(const Volume & v)
{
  return v.spacing().cwiseInverse().asDiagonal() * v.direction().transpose();
}

// A voxel covers half a spacing either side of its center, so the metric
// accepts points up to half a voxel past the outer centers and clamps them
// onto the edge. Otherwise any sub-voxel shift drops a whole face of
// samples and the overlap change alone moves MI.
std::optional<double>
sample_footprint(const Volume & v, Vec3 idx) noexcept
{
  for (int d = 0; d < 3; ++d)
  {
    const double last = static_cast<double>(v.dims()[d] - 1);
    if (!(idx[d] >= -0.5) || !(idx[d] <= last + 0.5))
      return std::nullopt;
    idx[d] = std::clamp(idx[d], 0.0, last);
  }
  return v.sample_index(idx);
}

/** Fixed-image sample positions and their fixed-bin coordinates, in a fixed order. */
struct FixedSamples
{
  std::vector<Vec3>   world;
  std::vector<double> fpos;
};

FixedSamples
draw_samples(const Volume & fixed, int stride, const BinMapper & fm)
{
  FixedSamples s;
  const auto & d = fixed.dims();
  const auto   step = static_cast<std::size_t>(stride);
  for (std::size_t k = 0; k < d[2]; k += step)
    for (std::size_t j = 0; j < d[1]; j += step)
      for (std::size_t i = 0; i < d[0]; i += step)
      {
        s.world.push_back(fixed.index_to_world(Vec3(double(i), double(j), double(k))));
        s.fpos.push_back(fm.position(fixed.at(i, j, k)));
      }
  return s;
}

/** Precomputed fixed samples against one moving volume. */
class MetricContext
{
public:
  MetricContext(const Volume &             fixed,
                const Volume &             moving,
                int                        stride,
                std::pair<double, double>  frange,
                std::pair<double, double>  mrange,
                const RegistrationConfig & cfg)
    : m_Moving(&moving)
    , m_Bins(cfg.bins)
    , m_FixedRange(frange)
    , m_MovingRange(mrange)
    , m_Mode(cfg.accumulation)
    , m_MovingMapper(mrange, cfg.bins)
    , m_MovingW2I(world_to_index_matrix(moving))
  {
    m_Samples = draw_samples(fixed, stride, BinMapper(frange, cfg.bins));
  }

  const FixedSamples &
  samples() const noexcept
  {
    return m_Samples;
  }
  const Volume &
  moving() const noexcept
  {
    return *m_Moving;
  }
  const BinMapper &
  moving_mapper() const noexcept
  {
    return m_MovingMapper;
  }
  BinAccumulation
  mode() const noexcept
  {
    return m_Mode;
  }

  JointHistogram
  empty_histogram() const
  {
    JointHistogram h(m_Bins, m_FixedRange, m_MovingRange);
    h.n_drawn = m_Samples.world.size();
    return h;
  }

  /** Moving-index coordinates of a moving-world point. */
  Vec3
  moving_index(const Vec3 & world) const noexcept
  {
    return m_MovingW2I * (world - m_Moving->origin());
  }

  JointHistogram
  histogram(const RigidTransform & t) const
  {
    JointHistogram h = empty_histogram();
    const Mat3     A = m_MovingW2I * t.rotation;
    const Vec3     b = m_MovingW2I * (t.translation - m_Moving->origin());
    const auto &   world = m_Samples.world;
    for (std::size_t n = 0; n < world.size(); ++n)
    {
      const auto v = sample_footprint(*m_Moving, A * world[n] + b);
      if (!v)
      {
        ++h.n_outside;
        continue;
      }
      accumulate(h, m_Samples.fpos[n], m_MovingMapper.position(*v), m_Mode, 1.0);
    }
    return h;
  }

  JointHistogram
  histogram(const SpatialMapping & t) const
  {
    if (!t.grid)
      return histogram(t.rigid);
    JointHistogram h = empty_histogram();
    const auto &   world = m_Samples.world;
    for (std::size_t n = 0; n < world.size(); ++n)
    {
      const auto q = t.map(world[n]);
      std::optional<double> v;
      if (q)
        v = sample_footprint(*m_Moving, moving_index(*q));
      if (!v)
      {
        ++h.n_outside;
        continue;
      }
      accumulate(h, m_Samples.fpos[n], m_MovingMapper.position(*v), m_Mode, 1.0);
    }
    return h;
  }

private:
  const Volume *            m_Moving;
  int                       m_Bins;
  std::pair<double, double> m_FixedRange;
  std::pair<double, double> m_MovingRange;
  BinAccumulation           m_Mode;
  BinMapper                 m_MovingMapper;
  Mat3                      m_MovingW2I;
  FixedSamples              m_Samples;
};

double
overlap_fraction(const JointHistogram & h)
{
  return h.n_drawn ? h.n_samples / static_cast<double>(h.n_drawn) : 0.0;
}

void
check_overlap(const JointHistogram & h, const RegistrationConfig & cfg)
{
  if (!(h.n_samples > 0.0))
    throw RegistrationError(RegistrationError::Kind::EmptyOverlap, "fixed and moving images do not overlap");
  if (overlap_fraction(h) < cfg.min_overlap_fraction)
  {
    std::ostringstream msg;
    msg << "overlap " << overlap_fraction(h) * 100.0 << "% is below the " << cfg.min_overlap_fraction * 100.0
        << "% minimum";
    throw RegistrationError(RegistrationError::Kind::InsufficientOverlap, msg.str());
  }
}

/** MI, or kRejected when the overlap policy fails. */
double
guarded_mi(const JointHistogram & h, const RegistrationConfig & cfg)
{
  if (!(h.n_samples > 0.0) || overlap_fraction(h) < cfg.min_overlap_fraction)
    return kRejected;
  return mutual_information(h);
}

Vec3
volume_center(const Volume & v)
{
  return v.index_to_world(Vec3((v.dims()[0] - 1) / 2.0, (v.dims()[1] - 1) / 2.0, (v.dims()[2] - 1) / 2.0));
}

using RigidParams = std::array<double, 6>; // rx ry rz tx ty tz

/** R(x) = Rzyx (init(x) - c') + c' + t with c' = init(center). */
RigidTransform
params_to_transform(const RigidTransform & init, const Vec3 & center, const RigidParams & p)
{
  const Vec3     c = init.apply(center);
  const Mat3     R = euler_zyx(p[0], p[1], p[2]);
  RigidTransform t;
  t.rotation = R * init.rotation;
  t.translation = R * (init.translation - c) + c + Vec3(p[3], p[4], p[5]);
  return t;
}

/**
 * Golden-section maximization of f on [a,b]; returns (argmax, max) over
 * every point evaluated.
 */
std::pair<double, double>
golden_section_max(const std::function<double(double)> & f, double a, double b, double tol)
{
  constexpr double invPhi = 0.6180339887498949;
  double           x1 = b - invPhi * (b - a);
  double           x2 = a + invPhi * (b - a);
  double           f1 = f(x1);
  double           f2 = f(x2);
  double           bestX = f1 >= f2 ? x1 : x2;
  double           bestF = std::max(f1, f2);
  while (b - a > tol)
  {
    if (f1 >= f2)
    {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - invPhi * (b - a);
      f1 = f(x1);
      if (f1 > bestF)
      {
        bestF = f1;
        bestX = x1;
      }
    }
    else
    {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + invPhi * (b - a);
      f2 = f(x2);
      if (f2 > bestF)
      {
        bestF = f2;
        bestX = x2;
      }
    }
  }
  return { bestX, bestF };
}

} // namespace

JointHistogram
joint_histogram(const Volume & fixed, const Volume & moving, const SpatialMapping & t, const RegistrationConfig & cfg)
{
  cfg.validate();
  const MetricContext ctx(fixed, moving, cfg.sample_stride, fixed.intensity_range(), moving.intensity_range(), cfg);
  JointHistogram      h = ctx.histogram(t);
  if (!(h.n_samples > 0.0))
    throw RegistrationError(RegistrationError::Kind::EmptyOverlap, "fixed and moving images do not overlap");
  return h;
}

JointHistogram
joint_histogram(const Volume & fixed, const Volume & moving, const RigidTransform & t, const RegistrationConfig & cfg)
{
  return joint_histogram(fixed, moving, SpatialMapping{ t, std::nullopt }, cfg);
}

Volume
downsample2(const Volume & vol)
{
  const auto & d = vol.dims();
  Volume::Dims nd{};
  for (int a = 0; a < 3; ++a)
    nd[a] = std::max<std::size_t>(1, d[a] / 2);

  std::vector<double> data(nd[0] * nd[1] * nd[2]);
  for (std::size_t k = 0; k < nd[2]; ++k)
    for (std::size_t j = 0; j < nd[1]; ++j)
      for (std::size_t i = 0; i < nd[0]; ++i)
      {
        double sum = 0.0;
        int    count = 0;
        for (std::size_t dk = 0; dk < 2; ++dk)
          for (std::size_t dj = 0; dj < 2; ++dj)
            for (std::size_t di = 0; di < 2; ++di)
            {
              const std::size_t ii = 2 * i + di, jj = 2 * j + dj, kk = 2 * k + dk;
              if (ii < d[0] && jj < d[1] && kk < d[2])
              {
                sum += vol.at(ii, jj, kk);
                ++count;
              }
            }
        data[i + nd[0] * (j + nd[1] * k)] = sum / count;
      }

  Vec3 shift = Vec3::Zero();
  Vec3 spacing = vol.spacing();
  for (int a = 0; a < 3; ++a)
  {
    if (d[a] >= 2)
    {
      shift[a] = 0.5;
      spacing[a] *= 2.0;
    }
  }
  const Vec3 origin = vol.index_to_world(shift);
  return Volume(nd, spacing, origin, vol.direction(), std::move(data), vol.modality(), ScalarType::Float32);
}

RegistrationReport
register_rigid_mi(const Volume & fixed, const Volume & moving, const RigidTransform & init, const RegistrationConfig & cfg)
{
  cfg.validate();
  init.validate(1e-6);

  const auto frange = fixed.intensity_range();
  const auto mrange = moving.intensity_range();
  const Vec3 center = volume_center(fixed);

  // Full-resolution metric: the one reported and the finest pyramid level.
  const MetricContext full(fixed, moving, cfg.sample_stride, frange, mrange, cfg);
  const auto          initHist = full.histogram(init);
  check_overlap(initHist, cfg);

  RegistrationReport report;
  report.initial_mi = mutual_information(initHist);

  RigidParams params{};
  RigidParams bestParams{};
  double      bestFullMi = report.initial_mi;
  report.mi_trace.push_back(bestFullMi);

  // Pyramid: index 0 is full resolution.
  std::vector<Volume> fixedLevels{ fixed };
  std::vector<Volume> movingLevels{ moving };
  for (int l = 1; l < cfg.pyramid_levels; ++l)
  {
    const Volume & f = fixedLevels.back();
    const Volume & m = movingLevels.back();
    if (std::min({ f.dims()[0], f.dims()[1], f.dims()[2] }) < 16 || std::min({ m.dims()[0], m.dims()[1], m.dims()[2] }) < 16)
      break;
    fixedLevels.push_back(downsample2(f));
    movingLevels.push_back(downsample2(m));
  }
  const int levels = static_cast<int>(fixedLevels.size());

  bool finestConverged = false;
  for (int l = levels - 1; l >= 0; --l)
  {
    const double        scale = std::ldexp(1.0, l); // 2^l
    const double        coarsest = std::ldexp(1.0, levels - 1);
    std::optional<MetricContext> levelCtx;
    if (l > 0)
      levelCtx.emplace(fixedLevels[l], movingLevels[l], 1, frange, mrange, cfg);
    const MetricContext & ctx = l == 0 ? full : *levelCtx;

    std::array<double, 6> bracket{};
    std::array<double, 6> tol{};
    for (int p = 0; p < 6; ++p)
    {
      const bool rot = p < 3;
      bracket[p] = (rot ? cfg.rotation_bracket_rad : cfg.translation_bracket_mm) * scale / coarsest;
      tol[p] = (rot ? cfg.rotation_tolerance_rad : cfg.translation_tolerance_mm) * scale;
    }

    auto evaluate = [&](const RigidParams & p) { return guarded_mi(ctx.histogram(params_to_transform(init, center, p)), cfg); };
    double current = evaluate(params);

    bool levelConverged = false;
    for (int sweep = 0; sweep < cfg.max_sweeps_per_level; ++sweep)
    {
      ++report.iterations;
      double maxMove = 0.0;
      bool   anyMoved = false;
      for (int p = 0; p < 6; ++p)
      {
        const double x0 = params[p];
        auto         f1d = [&](double x) {
          RigidParams trial = params;
          trial[p] = x;
          return evaluate(trial);
        };
        const auto [x, fx] = golden_section_max(f1d, x0 - bracket[p], x0 + bracket[p], tol[p]);
        if (fx > current)
        {
          params[p] = x;
          current = fx;
          anyMoved = true;
          maxMove = std::max(maxMove, std::abs(x - x0) / tol[p]);
        }
      }

      const double fullMi = l == 0 ? current : guarded_mi(full.histogram(params_to_transform(init, center, params)), cfg);
      if (fullMi > bestFullMi)
      {
        bestFullMi = fullMi;
        bestParams = params;
      }
      report.mi_trace.push_back(bestFullMi);

      if (!anyMoved || maxMove <= 1.0)
      {
        levelConverged = true;
        break;
      }
      // Narrow the search once the moves fall inside half the bracket.
      for (int p = 0; p < 6; ++p)
        bracket[p] = std::max(bracket[p] * 0.5, 4.0 * tol[p]);
    }
    if (l == 0)
      finestConverged = levelConverged;
  }

  report.final_transform = params_to_transform(init, center, bestParams);
  report.final_mi = bestFullMi;
  report.converged = finestConverged;
  return report;
}

namespace
{

/** State of the deformable optimizer for one fixed sample. */
struct DeformSample
{
  Vec3                                 mapped;   // rigid-mapped moving-world point
  std::array<std::size_t, 3>           first{};  // first supporting control index
  std::array<std::array<double, 4>, 3> weights{};
  Vec3                                 displacement = Vec3::Zero();
  double                               fpos = 0.0;
  double                               mpos = 0.0;
  bool                                 inside = false;
};

class DeformableProblem
{
public:
  DeformableProblem(const MetricContext & ctx, const RigidTransform & rigid, BSplineGrid grid)
    : m_Ctx(ctx)
    , m_Grid(std::move(grid))
  {
    const auto & s = ctx.samples();
    m_Samples.resize(s.world.size());
    const auto & gd = m_Grid.dims();
    m_CellSamples.resize(gd[0] * gd[1] * gd[2]);
    for (std::size_t n = 0; n < s.world.size(); ++n)
    {
      DeformSample & ds = m_Samples[n];
      ds.mapped = rigid.apply(s.world[n]);
      ds.fpos = s.fpos[n];
      if (!m_Grid.support(ds.mapped, ds.first, ds.weights))
        throw RegistrationError(RegistrationError::Kind::InvalidConfig, "B-spline grid does not cover the fixed image");
      m_CellSamples[m_Grid.linear_index(ds.first[0], ds.first[1], ds.first[2])].push_back(n);
    }
  }

  BSplineGrid &
  grid() noexcept
  {
    return m_Grid;
  }

  /** Recomputes every displacement and the histogram from the current grid. */
  JointHistogram
  rebuild()
  {
    JointHistogram h = m_Ctx.empty_histogram();
    const auto &   disp = m_Grid.displacements();
    for (auto & ds : m_Samples)
    {
      Vec3 d = Vec3::Zero();
      for (int c = 0; c < 4; ++c)
        for (int b = 0; b < 4; ++b)
        {
          const double      wbc = ds.weights[1][b] * ds.weights[2][c];
          const std::size_t base = m_Grid.linear_index(ds.first[0], ds.first[1] + b, ds.first[2] + c);
          for (int a = 0; a < 4; ++a)
            d += (ds.weights[0][a] * wbc) * disp[base + a];
        }
      ds.displacement = d;
      ds.inside = evaluate(ds, d, ds.mpos);
      if (ds.inside)
        accumulate(h, ds.fpos, ds.mpos, m_Ctx.mode(), 1.0);
      else
        ++h.n_outside;
    }
    return h;
  }

  /**
   * MI after moving control point `cp` by delta along `axis`, using the
   * current histogram as the base.
   */
  double
  perturbed_mi(const JointHistogram & base, std::size_t cp, int axis, double delta, const RegistrationConfig & cfg) const
  {
    JointHistogram h = base;
    const auto &   gd = m_Grid.dims();
    const std::size_t ci = cp % gd[0];
    const std::size_t cj = (cp / gd[0]) % gd[1];
    const std::size_t ck = cp / (gd[0] * gd[1]);

    for (std::size_t fk = ck >= 3 ? ck - 3 : 0; fk <= ck; ++fk)
      for (std::size_t fj = cj >= 3 ? cj - 3 : 0; fj <= cj; ++fj)
        for (std::size_t fi = ci >= 3 ? ci - 3 : 0; fi <= ci; ++fi)
        {
          const auto & cell = m_CellSamples[m_Grid.linear_index(fi, fj, fk)];
          if (cell.empty())
            continue;
          const std::size_t a = ci - fi, b = cj - fj, c = ck - fk;
          for (std::size_t n : cell)
          {
            const DeformSample & ds = m_Samples[n];
            const double         w = ds.weights[0][a] * ds.weights[1][b] * ds.weights[2][c];
            Vec3                 d = ds.displacement;
            d[axis] += w * delta;
            double     mpos = 0.0;
            const bool inside = evaluate(ds, d, mpos);
            if (ds.inside)
              accumulate(h, ds.fpos, ds.mpos, m_Ctx.mode(), -1.0);
            else
              --h.n_outside;
            if (inside)
              accumulate(h, ds.fpos, mpos, m_Ctx.mode(), 1.0);
            else
              ++h.n_outside;
          }
        }
    // Accumulate/remove pairs can leave -0 style residue in empty cells.
    for (double & c : h.counts)
      if (c < 1e-9)
        c = 0.0;
    return guarded_mi(h, cfg);
  }

private:
  bool
  evaluate(const DeformSample & ds, const Vec3 & displacement, double & mpos) const
  {
    const auto v = sample_footprint(m_Ctx.moving(), m_Ctx.moving_index(ds.mapped + displacement));
    if (!v)
      return false;
    mpos = m_Ctx.moving_mapper().position(*v);
    return true;
  }

  const MetricContext &                 m_Ctx;
  BSplineGrid                           m_Grid;
  std::vector<DeformSample>             m_Samples;
  std::vector<std::vector<std::size_t>> m_CellSamples;
};

} // namespace

RegistrationReport
register_bspline_mi(const Volume &             fixed,
                    const Volume &             moving,
                    const RigidTransform &     rigid_init,
                    const RegistrationConfig & cfg)
{
  cfg.validate();
  rigid_init.validate(1e-6);

  const MetricContext ctx(fixed, moving, cfg.bspline_sample_stride, fixed.intensity_range(), moving.intensity_range(), cfg);
  check_overlap(ctx.histogram(rigid_init), cfg);

  // Grid over the rigidly mapped fixed domain, so every sample has full support.
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (int c = 0; c < 8; ++c)
  {
    const Vec3 idx((c & 1) ? double(fixed.dims()[0] - 1) : 0.0,
                   (c & 2) ? double(fixed.dims()[1] - 1) : 0.0,
                   (c & 4) ? double(fixed.dims()[2] - 1) : 0.0);
    const Vec3 w = rigid_init.apply(fixed.index_to_world(idx));
    lo = lo.cwiseMin(w);
    hi = hi.cwiseMax(w);
  }
  const Vec3   gridSpacing = fixed.spacing() * cfg.grid_spacing_voxels;
  // Mapped corners land exactly on the box; a small guard keeps rounding
  // from pushing them out of support.
  const Vec3 guard = 1e-6 * gridSpacing;
  lo -= guard;
  hi += guard;
  BSplineGrid::Dims gdims{};
  for (int d = 0; d < 3; ++d)
    gdims[d] = static_cast<std::size_t>(std::floor((hi[d] - lo[d]) / gridSpacing[d])) + 4;
  DeformableProblem problem(ctx, rigid_init, BSplineGrid(gdims, lo - gridSpacing, gridSpacing));

  JointHistogram hist = problem.rebuild();
  double         current = guarded_mi(hist, cfg);
  if (current == kRejected)
    check_overlap(hist, cfg);

  RegistrationReport report;
  report.final_transform = rigid_init;
  report.initial_mi = current;
  report.mi_trace.push_back(current);

  const double      h = cfg.bspline_fd_step_mm;
  const std::size_t nControl = problem.grid().control_count();
  double            step = cfg.bspline_initial_step_mm;
  bool              converged = false;

  for (int iter = 0; iter < cfg.bspline_iterations && !converged; ++iter)
  {
    ++report.iterations;
    std::vector<Vec3> gradient(nControl, Vec3::Zero());
    double            gmax = 0.0;
    for (std::size_t cp = 0; cp < nControl; ++cp)
      for (int axis = 0; axis < 3; ++axis)
      {
        const double up = problem.perturbed_mi(hist, cp, axis, h, cfg);
        const double down = problem.perturbed_mi(hist, cp, axis, -h, cfg);
        double       g = 0.0;
        if (up != kRejected && down != kRejected)
          g = (up - down) / (2.0 * h);
        gradient[cp][axis] = g;
        gmax = std::max(gmax, std::abs(g));
      }
    if (!(gmax > 0.0))
    {
      converged = true;
      break;
    }

    // Backtrack along the max-norm-normalized gradient until MI improves.
    const std::vector<Vec3> saved = problem.grid().displacements();
    bool                    improved = false;
    while (step >= cfg.bspline_min_step_mm)
    {
      auto & disp = problem.grid().displacements();
      for (std::size_t cp = 0; cp < nControl; ++cp)
        disp[cp] = saved[cp] + (step / gmax) * gradient[cp];
      JointHistogram trialHist = problem.rebuild();
      const double   trial = guarded_mi(trialHist, cfg);
      if (trial > current)
      {
        hist = std::move(trialHist);
        current = trial;
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved)
    {
      problem.grid().displacements() = saved;
      hist = problem.rebuild();
      converged = true;
    }
    report.mi_trace.push_back(current);
  }

  report.grid = problem.grid();
  report.final_mi = current;
  report.converged = converged;
  return report;
}

Volume
resample_to(const Volume & fixed, const Volume & moving, const SpatialMapping & t, double outside_value)
{
  std::vector<double> data(fixed.voxel_count());
  const auto &        d = fixed.dims();
  for (std::size_t k = 0; k < d[2]; ++k)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t i = 0; i < d[0]; ++i)
      {
        const auto            q = t.map(fixed.index_to_world(Vec3(double(i), double(j), double(k))));
        std::optional<double> v;
        if (q)
          v = moving.sample_trilinear(*q);
        data[fixed.linear_index(i, j, k)] = v ? *v : outside_value;
      }
  return Volume(d, fixed.spacing(), fixed.origin(), fixed.direction(), std::move(data), moving.modality(), moving.scalar_type());
}

double
mean_squared_difference(const Volume & fixed, const Volume & moving, const SpatialMapping & t)
{
  double      sum = 0.0;
  std::size_t count = 0;
  const auto & d = fixed.dims();
  for (std::size_t k = 0; k < d[2]; ++k)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t i = 0; i < d[0]; ++i)
      {
        const auto q = t.map(fixed.index_to_world(Vec3(double(i), double(j), double(k))));
        if (!q)
          continue;
        const auto v = moving.sample_trilinear(*q);
        if (!v)
          continue;
        const double diff = *v - fixed.at(i, j, k);
        sum += diff * diff;
        ++count;
      }
  if (count == 0)
    throw RegistrationError(RegistrationError::Kind::EmptyOverlap, "no overlapping voxels");
  return sum / static_cast<double>(count);
}

} // namespace petnav
