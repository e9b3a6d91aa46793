#include "mpnet/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "mpnet/augment.hpp"
#include "mpnet/io.hpp"

namespace mpnet {

namespace {

Tensor<float> normalized_batch(const Dataset& data, const ChannelStats& stats, int64_t begin,
                               int64_t count) {
  Tensor<float> batch({count, data.channels(), data.height(), data.width()});
  for (int64_t i = 0; i < count; ++i) fill_normalized(batch, i, data.image(begin + i), stats);
  return batch;
}

}  // namespace

RouteTraceSet trace_routes(const Model<float>& model, const Dataset& data,
                           const ChannelStats& stats, int batch_size) {
  RouteTraceSet set;
  set.cross_layers = static_cast<int64_t>(model.cross.size());
  ForwardOptions opts;
  opts.trace = true;
  for (int64_t begin = 0; begin < data.size(); begin += batch_size) {
    const int64_t count = std::min<int64_t>(batch_size, data.size() - begin);
    Var<float> input = constant(normalized_batch(data, stats, begin, count));
    ForwardResult<float> out = forward(model, static_cast<Tape<float>*>(nullptr), input, opts);
    for (const LayerTrace<float>& trace : out.traces)
      for (int64_t s = 0; s < count; ++s) {
        RouteTraceRecord rec;
        rec.sample_id = begin + s;
        rec.label = data.labels[static_cast<size_t>(begin + s)];
        rec.context = data.contexts.empty() ? -1 : data.contexts[static_cast<size_t>(begin + s)];
        rec.layer = trace.layer_index;
        rec.m = trace.m;
        rec.n = trace.n;
        rec.gates = trace.per_sample[static_cast<size_t>(s)].values;
        rec.in_strength = trace.in_strength[static_cast<size_t>(s)];
        rec.out_strength = trace.out_strength[static_cast<size_t>(s)];
        set.records.push_back(std::move(rec));
      }
  }
  // Order records by sample, then layer.
  std::sort(set.records.begin(), set.records.end(),
            [](const RouteTraceRecord& a, const RouteTraceRecord& b) {
              return a.sample_id != b.sample_id ? a.sample_id < b.sample_id : a.layer < b.layer;
            });
  return set;
}

void write_trace_csv(const RouteTraceSet& traces, const std::string& path) {
  if (traces.records.empty()) {
    CsvWriter csv({"sample_id", "label", "context", "layer", "m", "n"});
    csv.save(path);
    return;
  }
  // Column layout follows the widest record (a model has fixed m, n per
  // layer; the max covers them all, unused cells stay empty).
  int64_t max_m = 0, max_n = 0;
  for (const auto& r : traces.records) {
    max_m = std::max(max_m, r.m);
    max_n = std::max(max_n, r.n);
  }
  std::vector<std::string> header{"sample_id", "label", "context", "layer", "m", "n"};
  for (int64_t j = 0; j < max_n; ++j)
    for (int64_t i = 0; i < max_m; ++i)
      header.push_back("g" + std::to_string(j) + "_" + std::to_string(i));
  for (int64_t i = 0; i < max_m; ++i) header.push_back("in" + std::to_string(i));
  for (int64_t j = 0; j < max_n; ++j) header.push_back("out" + std::to_string(j));

  CsvWriter csv(header);
  for (const auto& r : traces.records) {
    std::vector<std::string> row{std::to_string(r.sample_id), std::to_string(r.label),
                                 std::to_string(r.context),   std::to_string(r.layer),
                                 std::to_string(r.m),         std::to_string(r.n)};
    for (int64_t j = 0; j < max_n; ++j)
      for (int64_t i = 0; i < max_m; ++i)
        row.push_back(j < r.n && i < r.m ? format_float(r.gates[static_cast<size_t>(j * r.m + i)])
                                         : "");
    for (int64_t i = 0; i < max_m; ++i)
      row.push_back(i < r.m ? format_float(r.in_strength[static_cast<size_t>(i)]) : "");
    for (int64_t j = 0; j < max_n; ++j)
      row.push_back(j < r.n ? format_float(r.out_strength[static_cast<size_t>(j)]) : "");
    csv.add_row(std::move(row));
  }
  csv.save(path);
}

void write_trace_json(const RouteTraceSet& traces, const std::string& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : traces.records) {
    nlohmann::json rec;
    rec["sample_id"] = r.sample_id;
    rec["label"] = r.label;
    rec["context"] = r.context;
    rec["layer"] = r.layer;
    rec["m"] = r.m;
    rec["n"] = r.n;
    rec["gates"] = r.gates;
    rec["in_strength"] = r.in_strength;
    rec["out_strength"] = r.out_strength;
    j.push_back(std::move(rec));
  }
  write_text_file(path, j.dump(2) + "\n");
}

void write_route_svg(const std::vector<RouteTraceRecord>& sample_records,
                     const std::string& path) {
  const double box_w = 46, box_h = 18, col_gap = 110, row_gap = 34, margin = 30;
  int64_t max_paths = 1;
  for (const auto& r : sample_records) max_paths = std::max({max_paths, r.m, r.n});
  const double width = margin * 2 + static_cast<double>(sample_records.size()) * col_gap + box_w;
  const double height = margin * 2 + static_cast<double>(max_paths) * row_gap + 20;

  SvgWriter svg(width, height);
  auto box_y = [&](int64_t idx, int64_t total) {
    const double span = static_cast<double>(total) * row_gap;
    return margin + (height - 2 * margin - span) / 2 + static_cast<double>(idx) * row_gap;
  };

  for (size_t k = 0; k < sample_records.size(); ++k) {
    const RouteTraceRecord& r = sample_records[k];
    const double x_in = margin + static_cast<double>(k) * col_gap;
    const double x_out = x_in + col_gap * 0.62;
    // Gate lines first, boxes on top.
    for (int64_t i = 0; i < r.m; ++i)
      for (int64_t j = 0; j < r.n; ++j) {
        const float g = r.gates[static_cast<size_t>(j * r.m + i)];
        svg.line(x_in + box_w, box_y(i, r.m) + box_h / 2, x_out, box_y(j, r.n) + box_h / 2,
                 "#1f4e9c", 0.5 + 3.0 * g, 0.15 + 0.85 * g);
        svg.circle(x_out, box_y(j, r.n) + box_h / 2, 2.5, "#1f4e9c", 0.15 + 0.85 * g);
      }
    for (int64_t i = 0; i < r.m; ++i)
      svg.rect(x_in, box_y(i, r.m), box_w, box_h, "#c42020",
               0.1 + 0.9 * r.in_strength[static_cast<size_t>(i)]);
    for (int64_t j = 0; j < r.n; ++j)
      svg.rect(x_out, box_y(j, r.n), box_w, box_h, "#c42020",
               0.1 + 0.9 * r.out_strength[static_cast<size_t>(j)]);
    svg.text(x_in, height - margin + 14, "cc" + std::to_string(r.layer), 11);
  }
  svg.save(path);
}

void validate_gate_address(const Model<float>& model, const GateAddress& addr) {
  if (addr.layer < 0 || addr.layer >= static_cast<int64_t>(model.cross.size()))
    throw ConfigError("gate address: layer " + std::to_string(addr.layer) +
                      " out of range, model has " + std::to_string(model.cross.size()) +
                      " cross-connection layers");
  const auto& layer = model.cross[static_cast<size_t>(addr.layer)];
  if (addr.input < 0 || addr.input >= layer.m)
    throw ConfigError("gate address: input " + std::to_string(addr.input) +
                      " out of range, layer has m=" + std::to_string(layer.m));
  if (addr.gate < 0 || addr.gate >= layer.n)
    throw ConfigError("gate address: gate " + std::to_string(addr.gate) +
                      " out of range, layer has n=" + std::to_string(layer.n));
}

GateRanking rank_by_gate(const Model<float>& model, const Dataset& data,
                         const ChannelStats& stats, const GateAddress& addr, int64_t k,
                         int batch_size) {
  validate_gate_address(model, addr);
  if (model.cross[static_cast<size_t>(addr.layer)].mode != RoutingMode::adaptive)
    throw ConfigError("rank_by_gate: layer " + std::to_string(addr.layer) +
                      " has fixed coefficients, not per-sample gates");

  std::vector<RankEntry> all;
  all.reserve(static_cast<size_t>(data.size()));
  ForwardOptions opts;
  opts.trace = true;
  for (int64_t begin = 0; begin < data.size(); begin += batch_size) {
    const int64_t count = std::min<int64_t>(batch_size, data.size() - begin);
    Var<float> input = constant(normalized_batch(data, stats, begin, count));
    ForwardResult<float> out = forward(model, static_cast<Tape<float>*>(nullptr), input, opts);
    const LayerTrace<float>& trace = out.traces[static_cast<size_t>(addr.layer)];
    for (int64_t s = 0; s < count; ++s) {
      RankEntry e;
      e.sample_id = begin + s;
      e.label = data.labels[static_cast<size_t>(begin + s)];
      e.context = data.contexts.empty() ? -1 : data.contexts[static_cast<size_t>(begin + s)];
      e.gate_value = trace.per_sample[static_cast<size_t>(s)].at(addr.gate, addr.input);
      all.push_back(e);
    }
  }

  auto by_value_desc = [](const RankEntry& a, const RankEntry& b) {
    return a.gate_value != b.gate_value ? a.gate_value > b.gate_value
                                        : a.sample_id < b.sample_id;
  };
  auto by_value_asc = [](const RankEntry& a, const RankEntry& b) {
    return a.gate_value != b.gate_value ? a.gate_value < b.gate_value
                                        : a.sample_id < b.sample_id;
  };

  GateRanking ranking;
  ranking.address = addr;
  const auto take = std::min<int64_t>(k, static_cast<int64_t>(all.size()));
  std::sort(all.begin(), all.end(), by_value_desc);
  ranking.top.assign(all.begin(), all.begin() + take);
  std::sort(all.begin(), all.end(), by_value_asc);
  ranking.bottom.assign(all.begin(), all.begin() + take);
  return ranking;
}

void write_ranking_csv(const GateRanking& ranking, const std::string& path) {
  CsvWriter csv({"end", "rank", "sample_id", "label", "context", "gate_value"});
  for (size_t r = 0; r < ranking.top.size(); ++r) {
    const RankEntry& e = ranking.top[r];
    csv.add_row({"top", std::to_string(r), std::to_string(e.sample_id), std::to_string(e.label),
                 std::to_string(e.context), format_float(e.gate_value)});
  }
  for (size_t r = 0; r < ranking.bottom.size(); ++r) {
    const RankEntry& e = ranking.bottom[r];
    csv.add_row({"bottom", std::to_string(r), std::to_string(e.sample_id),
                 std::to_string(e.label), std::to_string(e.context),
                 format_float(e.gate_value)});
  }
  csv.save(path);
}

// ---------------------------------------------------------------------------
// Gate neuron activation maximization
// ---------------------------------------------------------------------------

SynthesisResult synthesize_gate_input(const Model<float>& model, const ChannelStats& stats,
                                      const SynthesisConfig& cfg) {
  validate_gate_address(model, cfg.target);
  const auto& layer = model.cross[static_cast<size_t>(cfg.target.layer)];
  if (layer.mode != RoutingMode::adaptive)
    throw ConfigError("synthesize_gate_input: target layer has fixed coefficients, no gate neuron");
  if (cfg.steps < 0 || cfg.step_size < 0)
    throw ConfigError("synthesize_gate_input: steps and step_size must be >= 0");

  const ModelSpec& spec = model.spec;
  const int64_t c = spec.in_channels, h = spec.in_h, w = spec.in_w;

  // Ascent runs in the normalized domain; the valid pixel range [0, 1]
  // maps to per-channel bounds.
  std::vector<float> lo(static_cast<size_t>(c)), hi(static_cast<size_t>(c));
  for (int64_t ch = 0; ch < c; ++ch) {
    lo[static_cast<size_t>(ch)] =
        (0.0f - stats.mean[static_cast<size_t>(ch)]) / stats.stddev[static_cast<size_t>(ch)];
    hi[static_cast<size_t>(ch)] =
        (1.0f - stats.mean[static_cast<size_t>(ch)]) / stats.stddev[static_cast<size_t>(ch)];
  }

  Tensor<float> x({1, c, h, w});
  if (cfg.init == SynthesisInit::noise) {
    Rng rng(detail::splitmix64(cfg.seed ^ 0x53594e5448455aull));
    for (int64_t i = 0; i < x.size(); ++i)
      x[i] = static_cast<float>(rng.normal()) * 0.1f;
  }
  auto clip = [&](Tensor<float>& t) {
    for (int64_t ch = 0; ch < c; ++ch) {
      float* p = t.data() + ch * h * w;
      for (int64_t i = 0; i < h * w; ++i)
        p[i] = std::clamp(p[i], lo[static_cast<size_t>(ch)], hi[static_cast<size_t>(ch)]);
    }
  };
  clip(x);

  // Parameters are frozen: gradient flows only into the input.
  std::vector<bool> saved_flags;
  saved_flags.reserve(model.params.size());
  for (const auto& [name, p] : model.params) {
    saved_flags.push_back(p->needs_grad);
    p->needs_grad = false;
  }

  SynthesisResult result;
  const float lambda = static_cast<float>(cfg.l2_coeff);
  ForwardOptions opts;
  opts.keep_gate_vars = true;

  try {
    for (int step = 0; step <= cfg.steps; ++step) {
      Tape<float> tape;
      Var<float> input = leaf(x, true);
      ForwardResult<float> out = forward(model, &tape, input, opts);
      const Var<float>& relevance =
          out.relevance[static_cast<size_t>(cfg.target.layer)][static_cast<size_t>(cfg.target.input)];
      Var<float> score = pick(&tape, relevance, cfg.target.gate);
      Var<float> penalty = scale(&tape, sum_squares(&tape, input), lambda);
      Var<float> objective = sub(&tape, score, penalty);

      const double obj = static_cast<double>(objective->value[0]);
      if (!std::isfinite(obj))
        throw NumericalError("synthesis diverged at step " + std::to_string(step));
      result.objective.push_back(obj);
      if (step == 0) result.relevance_start = static_cast<double>(score->value[0]);
      result.relevance_final = static_cast<double>(score->value[0]);
      if (step == cfg.steps) break;

      tape.backward(objective);
      const float eta = static_cast<float>(cfg.step_size);
      for (int64_t i = 0; i < x.size(); ++i) x[i] += eta * input->grad[i];
      clip(x);
    }
  } catch (...) {
    size_t i = 0;
    for (const auto& [name, p] : model.params) p->needs_grad = saved_flags[i++];
    throw;
  }
  size_t i = 0;
  for (const auto& [name, p] : model.params) p->needs_grad = saved_flags[i++];

  // Denormalize for export.
  result.image = Tensor<float>({c, h, w});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t k = 0; k < h * w; ++k)
      result.image[ch * h * w + k] =
          std::clamp(x[ch * h * w + k] * stats.stddev[static_cast<size_t>(ch)] +
                         stats.mean[static_cast<size_t>(ch)],
                     0.0f, 1.0f);
  return result;
}

void write_objective_csv(const SynthesisResult& result, const std::string& path) {
  CsvWriter csv({"step", "objective"});
  for (size_t s = 0; s < result.objective.size(); ++s)
    csv.add_row({std::to_string(s), format_float(result.objective[s])});
  csv.save(path);
}

// ---------------------------------------------------------------------------
// Weight histograms
// ---------------------------------------------------------------------------

namespace {

// Collects weight+bias values of feed-forward layer `index` of one path.
std::vector<float> layer_params(const Model<float>& model, int64_t path, int64_t index,
                                std::string& name_out) {
  const int64_t conv_count = static_cast<int64_t>(model.conv[0].size());
  const int64_t dense_count = static_cast<int64_t>(model.dense[0].size());
  if (index < 0 || index >= conv_count + dense_count)
    throw ConfigError("weight_histograms: layer index " + std::to_string(index) +
                      " out of range [0, " + std::to_string(conv_count + dense_count) + ")");
  const Var<float>*w, *b;
  if (index < conv_count) {
    w = &model.conv[static_cast<size_t>(path)][static_cast<size_t>(index)].weight;
    b = &model.conv[static_cast<size_t>(path)][static_cast<size_t>(index)].bias;
    name_out = "conv" + std::to_string(index);
  } else {
    w = &model.dense[static_cast<size_t>(path)][static_cast<size_t>(index - conv_count)].weight;
    b = &model.dense[static_cast<size_t>(path)][static_cast<size_t>(index - conv_count)].bias;
    name_out = "dense" + std::to_string(index - conv_count);
  }
  std::vector<float> vals;
  vals.reserve(static_cast<size_t>((*w)->value.size() + (*b)->value.size()));
  for (int64_t i = 0; i < (*w)->value.size(); ++i) vals.push_back((*w)->value[i]);
  for (int64_t i = 0; i < (*b)->value.size(); ++i) vals.push_back((*b)->value[i]);
  return vals;
}

}  // namespace

std::vector<LayerHistogram> weight_histograms(const Model<float>& model,
                                              const std::vector<int64_t>& layer_indices,
                                              int bins) {
  if (model.spec.paths < 2)
    throw ConfigError("weight_histograms: model must have >= 2 paths");
  if (bins < 1) throw ConfigError("weight_histograms: bins must be >= 1");

  std::vector<LayerHistogram> out;
  for (int64_t index : layer_indices) {
    LayerHistogram hist;
    std::vector<std::vector<float>> per_path;
    for (int64_t p = 0; p < model.spec.paths; ++p)
      per_path.push_back(layer_params(model, p, index, hist.layer));
    hist.param_count = static_cast<int64_t>(per_path[0].size());

    float lo = per_path[0][0], hi = per_path[0][0];
    for (const auto& vals : per_path)
      for (float v : vals) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    if (hi <= lo) hi = lo + 1e-6f;
    hist.lo = lo;
    hist.hi = hi;

    const float scale = static_cast<float>(bins) / (hi - lo);
    for (const auto& vals : per_path) {
      std::vector<int64_t> counts(static_cast<size_t>(bins), 0);
      for (float v : vals) {
        auto bin = static_cast<int64_t>((v - lo) * scale);
        bin = std::clamp<int64_t>(bin, 0, bins - 1);
        ++counts[static_cast<size_t>(bin)];
      }
      hist.counts.push_back(std::move(counts));
    }

    for (size_t a = 0; a < hist.counts.size(); ++a)
      for (size_t b = a + 1; b < hist.counts.size(); ++b) {
        double l1 = 0.0;
        for (int bin = 0; bin < bins; ++bin)
          l1 += std::abs(static_cast<double>(hist.counts[a][static_cast<size_t>(bin)]) -
                         static_cast<double>(hist.counts[b][static_cast<size_t>(bin)])) /
                static_cast<double>(hist.param_count);
        hist.max_pairwise_l1 = std::max(hist.max_pairwise_l1, l1);
      }
    out.push_back(std::move(hist));
  }
  return out;
}

void write_histogram_csv(const std::vector<LayerHistogram>& hists, const std::string& path) {
  CsvWriter csv({"layer", "path", "bin", "bin_lo", "bin_hi", "count"});
  for (const auto& h : hists) {
    const int bins = static_cast<int>(h.counts[0].size());
    const float width = (h.hi - h.lo) / static_cast<float>(bins);
    for (size_t p = 0; p < h.counts.size(); ++p)
      for (int bin = 0; bin < bins; ++bin)
        csv.add_row({h.layer, std::to_string(p), std::to_string(bin),
                     format_float(h.lo + static_cast<float>(bin) * width),
                     format_float(h.lo + static_cast<float>(bin + 1) * width),
                     std::to_string(h.counts[p][static_cast<size_t>(bin)])});
  }
  csv.save(path);
}

void write_histogram_svg(const std::vector<LayerHistogram>& hists, const std::string& path) {
  const double panel_w = 220, panel_h = 140, margin = 36, gap = 28;
  const double width = margin * 2 + static_cast<double>(hists.size()) * (panel_w + gap);
  const double height = margin * 2 + panel_h + 24;
  const char* palette[4] = {"#c42020", "#1f4e9c", "#1d8a3c", "#8a6d1d"};

  SvgWriter svg(width, height);
  for (size_t k = 0; k < hists.size(); ++k) {
    const LayerHistogram& h = hists[k];
    const double x0 = margin + static_cast<double>(k) * (panel_w + gap);
    const double y0 = margin;
    int64_t peak = 1;
    for (const auto& counts : h.counts)
      for (int64_t cnt : counts) peak = std::max(peak, cnt);
    svg.rect(x0, y0, panel_w, panel_h, "#f7f7f7");
    const int bins = static_cast<int>(h.counts[0].size());
    for (size_t p = 0; p < h.counts.size(); ++p) {
      std::vector<std::pair<double, double>> pts;
      for (int bin = 0; bin < bins; ++bin) {
        const double x = x0 + panel_w * (static_cast<double>(bin) + 0.5) / bins;
        const double y =
            y0 + panel_h -
            panel_h * static_cast<double>(h.counts[p][static_cast<size_t>(bin)]) /
                static_cast<double>(peak);
        pts.emplace_back(x, y);
      }
      svg.polyline(pts, palette[p % 4], 1.5);
    }
    svg.text(x0, y0 + panel_h + 16, h.layer + "  L1=" + format_float(h.max_pairwise_l1), 11);
  }
  svg.save(path);
}

}  // namespace mpnet
