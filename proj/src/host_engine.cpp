#include "ndt/host_engine.hpp"

#include <algorithm>
#include <cmath>

namespace ndt {

Schema orderline_schema() {
  return Schema("orderline", {
                                 {"ol_o_id", FieldType::int32(), false},
                                 {"ol_d_id", FieldType::int32(), false},
                                 {"ol_w_id", FieldType::int32(), false},
                                 {"ol_number", FieldType::int32(), false},
                                 {"ol_i_id", FieldType::int32(), false},
                                 {"ol_delivery_d", FieldType::timestamp_pg(), true},
                                 {"ol_quantity", FieldType::int32(), false},
                                 {"ol_amount", FieldType::decimal(12, 2), false},
                                 {"ol_dist_info", FieldType::varchar(24), false},
                             });
}

namespace {

constexpr std::int32_t kDistricts = 10;
constexpr double kOrdersPerScale = 30000.0;
constexpr std::int64_t kTickMicros = 600LL * 1'000'000;  // logical clock step: 10 minutes

}  // namespace

OltpDriver::OltpDriver(MvccStore& store, const WorkloadConfig& cfg)
    : store_(store), cfg_(cfg), rng_(cfg.seed),
      warehouses_(std::max<std::int32_t>(1, static_cast<std::int32_t>(std::ceil(cfg.scale_factor)))) {
  if (!(cfg.scale_factor > 0)) fail(Errc::kInvalidConfig, "scale factor must be positive");
  if (!(store.schema() == orderline_schema())) fail(Errc::kSchemaMismatch, "driver needs the orderline schema");
}

std::int64_t OltpDriver::clock_micros() { return kWorkloadEpochPgMicros + static_cast<std::int64_t>(ticks_++) * kTickMicros; }

std::vector<Value> OltpDriver::line_values(const Order& order, std::int32_t number, bool delivered) {
  std::uniform_int_distribution<std::int32_t> item(1, 100000);
  std::uniform_int_distribution<std::int32_t> qty(1, 10);
  std::uniform_int_distribution<std::int64_t> cents(1, 999999);
  std::uniform_int_distribution<int> letter(0, 25);
  std::string dist(24, 'a');
  for (auto& ch : dist) ch = static_cast<char>('a' + letter(rng_));
  Value date = Null{};
  if (delivered) date = PgTimestamp{kWorkloadEpochPgMicros + static_cast<std::int64_t>(ticks_) * kTickMicros};
  return {order.o, order.d, order.w, number, item(rng_), date, qty(rng_), Decimal{cents(rng_)}, dist};
}

void OltpDriver::load() {
  const auto total = static_cast<std::uint64_t>(std::llround(kOrdersPerScale * cfg_.scale_factor));
  std::uniform_int_distribution<int> line_count(5, 15);
  for (std::uint64_t i = 0; i < total; ++i) {
    Order order;
    order.w = static_cast<std::int32_t>(i % static_cast<std::uint64_t>(warehouses_)) + 1;
    order.d = static_cast<std::int32_t>((i / static_cast<std::uint64_t>(warehouses_)) % kDistricts) + 1;
    order.o = ++next_o_id_[{order.w, order.d}];
    const bool delivered = i * 10 < total * 7;
    const TxId t = store_.begin_tx();
    const int lines = line_count(rng_);
    for (int n = 1; n <= lines; ++n) {
      const Vid vid = next_vid_++;
      store_.install_version(t, vid, line_values(order, n, delivered));
      order.lines.push_back(vid);
    }
    store_.commit_tx(t);
    ++committed_;
    ++next_order_;
    clock_micros();
    if (!delivered) undelivered_[{order.w, order.d}].push_back(std::move(order));
  }
}

void OltpDriver::new_order() {
  std::uniform_int_distribution<std::int32_t> wd(0, warehouses_ * kDistricts - 1);
  std::uniform_int_distribution<int> line_count(5, 15);
  const auto pick = wd(rng_);
  Order order;
  order.w = pick / kDistricts + 1;
  order.d = pick % kDistricts + 1;
  order.o = ++next_o_id_[{order.w, order.d}];
  const TxId t = store_.begin_tx();
  const int lines = line_count(rng_);
  for (int n = 1; n <= lines; ++n) {
    const Vid vid = next_vid_++;
    store_.install_version(t, vid, line_values(order, n, false));
    order.lines.push_back(vid);
  }
  store_.commit_tx(t);
  ++committed_;
  ++next_order_;
  clock_micros();
  undelivered_[{order.w, order.d}].push_back(std::move(order));
}

bool OltpDriver::delivery() {
  std::uniform_int_distribution<std::int32_t> wd(0, warehouses_ * kDistricts - 1);
  const auto pick = wd(rng_);
  auto& queue = undelivered_[{pick / kDistricts + 1, pick % kDistricts + 1}];
  if (queue.empty()) return false;
  const Order order = std::move(queue.front());
  queue.erase(queue.begin());
  const std::int64_t now = clock_micros();
  const TxId t = store_.begin_tx();
  for (Vid vid : order.lines) {
    auto values = store_.values(*store_.vid_head(vid));
    values[kOlDeliveryD] = PgTimestamp{now};
    store_.install_version(t, vid, values);
  }
  store_.commit_tx(t);
  ++committed_;
  return true;
}

void OltpDriver::run() {
  std::uint64_t new_orders = cfg_.new_order_txns;
  std::uint64_t deliveries = cfg_.delivery_txns;
  while (new_orders + deliveries > 0) {
    std::uniform_int_distribution<std::uint64_t> pick(0, new_orders + deliveries - 1);
    if (pick(rng_) < new_orders) {
      new_order();
      --new_orders;
    } else {
      delivery();
      --deliveries;
    }
  }
}

std::uint64_t OltpDriver::update_fraction(double fraction, std::size_t batch) {
  if (fraction < 0 || fraction > 1) fail(Errc::kInvalidConfig, "update fraction outside [0,1]");
  if (batch == 0) fail(Errc::kInvalidConfig, "update batch size 0");
  std::vector<Vid> live;
  for (Vid v : store_.vids()) {
    const auto chain = store_.chain(v);
    if (!chain.empty() && !chain.front().tombstone) live.push_back(v);
  }
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(live.size())));
  std::shuffle(live.begin(), live.end(), rng_);
  live.resize(count);
  std::sort(live.begin(), live.end());

  std::uniform_int_distribution<std::int64_t> cents(1, 999999);
  for (std::size_t i = 0; i < live.size(); i += batch) {
    const std::int64_t now = clock_micros();
    const TxId t = store_.begin_tx();
    for (std::size_t k = i; k < std::min(live.size(), i + batch); ++k) {
      auto values = store_.values(*store_.vid_head(live[k]));
      values[kOlDeliveryD] = PgTimestamp{now};
      values[kOlAmount] = Decimal{cents(rng_)};
      store_.install_version(t, live[k], values);
    }
    store_.commit_tx(t);
    ++committed_;
  }
  return live.size();
}

WorkloadReport OltpDriver::report() const {
  return {committed_, store_.versions_created(), store_.host_ops(), store_.vid_count()};
}

WorkloadReport run_oltp(MvccStore& store, const WorkloadConfig& cfg) {
  OltpDriver driver(store, cfg);
  driver.load();
  driver.run();
  return driver.report();
}

// ---------------------------------------------------------------------------

std::vector<L2PEntry> NdpSystem::Link::deliver(const SharedStateSnapshot& snapshot) {
  std::lock_guard lock(sys_.channel_);
  return sys_.in_situ_.apply(snapshot);
}

NdpSystem::NdpSystem(Schema schema, SystemConfig cfg)
    : cfg_(std::move(cfg)), device_(cfg_.device), shared_(cfg_.delta_buffer_bytes), store_(std::move(schema), &shared_),
      in_situ_(device_), engine_(device_, in_situ_), link_(*this) {
  if (!(cfg_.estimate_headroom > 0)) fail(Errc::kInvalidConfig, "estimate headroom must be positive");
  shared_.attach(&link_);
  shared_.set_placement_sink([this](std::span<const L2PEntry> placements) { store_.apply_placements(placements); });
}

std::size_t NdpSystem::estimate_pages(std::span<const std::size_t> projection, std::uint32_t pe_count,
                                      double headroom) const {
  const Schema& schema = store_.schema();
  const std::uint64_t rows = store_.vid_count();
  std::uint64_t pages = 0;
  for (std::uint32_t pe = 0; pe < pe_count; ++pe) {
    const std::uint64_t r = rows / pe_count + (pe < rows % pe_count ? 1 : 0);
    pages += ceil_div(8 * r, kPageSize);
    for (auto i : projection) {
      const auto& a = schema.attribute(i);
      const std::uint64_t width = a.type.is_varlen() ? a.type.max_len : result_type(a.type).width();
      pages += ceil_div(width * r, kPageSize);
      if (a.nullable) pages += ceil_div(ceil_div(r, 8), kPageSize);
      if (a.type.is_varlen() && r > 0) pages += ceil_div((r + 1) * 4, kPageSize);
    }
  }
  const auto scaled = static_cast<std::size_t>(std::ceil(headroom * static_cast<double>(pages)));
  return std::max<std::size_t>(pe_count, scaled);
}

NdtInvocation NdpSystem::prepare_invocation(TxId caller, std::vector<std::size_t> projection, ResultMode mode,
                                            std::uint32_t pe_count, std::optional<std::size_t> result_pages) {
  ++invocation_ops_;
  validate_projection(store_.schema(), projection);
  if (pe_count == 0 || pe_count > device_.config().pe_count) {
    fail(Errc::kTooManyPEsRequested, std::to_string(pe_count) + " PEs requested");
  }
  if (!store_.is_in_flight(caller)) fail(Errc::kUnknownTx, "invocation caller " + std::to_string(caller) + " is not active");

  NdtInvocation inv{next_invocation_++, nullptr, store_.snapshot(caller), store_.schema(), std::move(projection),
                    pe_count, mode, {}};
  inv.shared_state = shared_.propagate(PropagationMode::kWithInvocation, inv.snapshot);
  if (mode == ResultMode::kMaterialize) {
    const std::size_t n = result_pages.value_or(estimate_pages(inv.projection, pe_count, cfg_.estimate_headroom));
    inv.result_pages = device_.allocate_pages(Region::kNvm, n, invocation_owner(inv.id));
  }
  return inv;
}

SpaceGrantor NdpSystem::grantor() {
  return [this](std::uint64_t id, std::size_t pages) { return grant_space(id, pages); };
}

std::optional<std::vector<PhysPage>> NdpSystem::grant_space(std::uint64_t invocation_id, std::size_t pages) {
  ++grants_;
  std::lock_guard lock(grant_mu_);
  if (cfg_.grant_limit_pages && granted_pages_ + pages > *cfg_.grant_limit_pages) return std::nullopt;
  try {
    auto granted = device_.allocate_pages(Region::kNvm, pages, invocation_owner(invocation_id));
    granted_pages_ += pages;
    return granted;
  } catch (const Error& e) {
    if (e.code() == Errc::kOutOfSpace) return std::nullopt;
    throw;
  }
}

MaterializationHandle NdpSystem::materialize(const NdtInvocation& inv) {
  std::lock_guard lock(channel_);
  return engine_.materialize_results(inv, grantor());
}

ExecutionStats NdpSystem::stream(const NdtInvocation& inv, const BatchConsumer& consumer, const StreamConfig& cfg) {
  std::lock_guard lock(channel_);
  return engine_.stream_results(inv, consumer, cfg);
}

DeltaResult NdpSystem::delta(MaterializationHandle& handle, const NdtInvocation& inv) {
  std::lock_guard lock(channel_);
  return delta_transform(engine_, handle, inv, grantor());
}

MaterializationHandle NdpSystem::compact(const MaterializationHandle& handle, const NdtInvocation& inv) {
  std::lock_guard lock(channel_);
  return ndt::compact(engine_, handle, inv, grantor());
}

void NdpSystem::free_handle(MaterializationHandle& handle) {
  if (handle.freed) fail(Errc::kStaleHandle, "materialization " + std::to_string(handle.id) + " already freed");
  std::lock_guard lock(channel_);
  for (auto owner : handle.owners) device_.free_owner(owner);
  handle.freed = true;
}

std::size_t NdpSystem::merge_cold() {
  shared_.propagate(PropagationMode::kRegular);
  std::lock_guard lock(channel_);
  return in_situ_.merge_delta_pages();
}

MaterializationHandle NdpSystem::materialize_now(std::vector<std::size_t> projection, std::uint32_t pe_count) {
  const TxId caller = store_.begin_tx();
  try {
    auto inv = prepare_invocation(caller, std::move(projection), ResultMode::kMaterialize, pe_count);
    auto handle = materialize(inv);
    store_.commit_tx(caller);
    return handle;
  } catch (...) {
    store_.abort_tx(caller);
    throw;
  }
}

ExportBaseline simulate_export(NdpSystem& sys) {
  ExportBaseline b;
  b.pages = sys.in_situ().data_page_count();
  b.records = sys.store().versions_created();
  b.ledger.device_to_host_bytes = b.pages * kPageSize;
  b.ledger.device_to_host_ops = b.pages;
  b.time = modeled_time(b.ledger, sys.device().config());
  return b;
}

// ---------------------------------------------------------------------------

Q6Params default_q6_params() {
  // [2024-01-01, 2024-07-01) in unix seconds
  return {1'704'067'200, 1'719'792'000, 1, 100000};
}

namespace {

bool q6_match(std::int64_t unix_seconds, std::int32_t quantity, const Q6Params& p) {
  return unix_seconds >= p.delivery_from && unix_seconds < p.delivery_to && quantity >= p.quantity_min &&
         quantity <= p.quantity_max;
}

const Column& require(const ColumnSet& view, const char* name) {
  auto i = view.index_of(name);
  if (!i) fail(Errc::kMissingColumn, name);
  return view.columns[*i];
}

}  // namespace

Decimal q6_columnar(const ColumnSet& view, const Q6Params& params) {
  const Column& date = require(view, "ol_delivery_d");
  const Column& qty = require(view, "ol_quantity");
  const Column& amount = require(view, "ol_amount");
  Decimal sum;
  for (std::uint64_t r = 0; r < view.row_count; ++r) {
    if (!view.row_visible(r) || !date.is_valid(r)) continue;
    const auto secs = load_le<std::int64_t>(date.values.data() + 8 * r);
    const auto q = load_le<std::int32_t>(qty.values.data() + 4 * r);
    if (q6_match(secs, q, params)) sum.scaled += load_le<std::int64_t>(amount.values.data() + 8 * r);
  }
  return sum;
}

Decimal q6_rowstore(const MvccStore& store, const SnapshotDescriptor& snap, const Q6Params& params) {
  Decimal sum;
  for (Vid vid : store.vids()) {
    const auto rid = store.oracle_visible_version(vid, snap);
    if (!rid) continue;
    const auto values = store.values(*rid);
    if (is_null(values[kOlDeliveryD])) continue;
    const auto secs = pg_timestamp_to_unix_epoch(std::get<PgTimestamp>(values[kOlDeliveryD]).micros);
    if (q6_match(secs, std::get<std::int32_t>(values[kOlQuantity]), params)) {
      sum.scaled += std::get<Decimal>(values[kOlAmount]).scaled;
    }
  }
  return sum;
}

ColumnSet oracle_columns(const MvccStore& store, const SnapshotDescriptor& snap,
                         std::span<const std::size_t> projection) {
  const Schema& schema = store.schema();
  validate_projection(schema, projection);
  const auto attrs = result_attributes(schema, projection);

  std::vector<std::vector<std::uint8_t>> values(attrs.size()), validity(attrs.size()), offsets(attrs.size());
  std::uint64_t rows = 0;
  auto put_u32 = [](std::vector<std::uint8_t>& buf, std::uint32_t v) {
    buf.resize(buf.size() + 4);
    store_le<std::uint32_t>(buf.data() + buf.size() - 4, v);
  };
  auto put_i64 = [](std::vector<std::uint8_t>& buf, std::int64_t v) {
    buf.resize(buf.size() + 8);
    store_le<std::int64_t>(buf.data() + buf.size() - 8, v);
  };

  for (Vid vid : store.vids()) {
    const auto rid = store.oracle_visible_version(vid, snap);
    if (!rid) continue;
    const auto row = store.values(*rid);
    put_i64(values[0], static_cast<std::int64_t>(vid));
    for (std::size_t k = 0; k < projection.size(); ++k) {
      const auto& a = attrs[k + 1];
      const Value& v = row[projection[k]];
      auto& buf = values[k + 1];
      if (a.nullable) {
        validity[k + 1].resize(ceil_div(rows + 1, 8), 0);
        if (!is_null(v)) validity[k + 1][rows / 8] |= static_cast<std::uint8_t>(1u << (rows % 8));
      }
      if (a.type.is_varlen()) {
        if (rows == 0) put_u32(offsets[k + 1], 0);
        if (!is_null(v)) {
          const auto& s = std::get<std::string>(v);
          buf.insert(buf.end(), s.begin(), s.end());
        }
        put_u32(offsets[k + 1], static_cast<std::uint32_t>(buf.size()));
        continue;
      }
      switch (a.type.kind) {
        case TypeKind::kInt32:
          buf.resize(buf.size() + 4);
          store_le<std::int32_t>(buf.data() + buf.size() - 4, is_null(v) ? 0 : std::get<std::int32_t>(v));
          break;
        case TypeKind::kInt64: put_i64(buf, is_null(v) ? 0 : std::get<std::int64_t>(v)); break;
        case TypeKind::kDecimal: put_i64(buf, is_null(v) ? 0 : std::get<Decimal>(v).scaled); break;
        case TypeKind::kTimestampUnix:
          put_i64(buf, is_null(v) ? 0 : pg_timestamp_to_unix_epoch(std::get<PgTimestamp>(v).micros));
          break;
        default: fail(Errc::kTypeMismatch, a.name);
      }
    }
    ++rows;
  }

  ColumnSetBuilder builder(attrs);
  std::vector<ColumnSetBuilder::FragmentColumn> cols;
  for (std::size_t i = 0; i < attrs.size(); ++i) cols.push_back({values[i], validity[i], offsets[i]});
  builder.append_fragment(rows, cols);
  return std::move(builder).finish();
}

}  // namespace ndt
