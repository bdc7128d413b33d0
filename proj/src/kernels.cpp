#include "fairgen/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "fairgen/types.hpp"

namespace fairgen::kernels {

const Ops& scalar_ops();          // kernels_scalar.cpp
const Ops* avx2_ops_or_null();    // kernels_avx2.cpp

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::atomic<const Ops*> g_active{nullptr};

const Ops* pick_auto() {
  if (const Ops* avx2 = avx2_ops_or_null(); avx2 != nullptr && cpu_has_avx2()) {
    return avx2;
  }
  return &scalar_ops();
}

const Ops* init_from_env() {
  if (const char* env = std::getenv("FAIRGEN_KERNELS"); env != nullptr) {
    const std::string name(env);
    if (name == "scalar") {
      return &scalar_ops();
    }
    if (name == "avx2" && supported(Variant::avx2)) {
      return avx2_ops_or_null();
    }
    // "auto", an unsupported request, or anything unrecognized falls through
    // to detection.
  }
  return pick_auto();
}

}  // namespace

const Ops& ops(Variant v) {
  switch (v) {
    case Variant::scalar:
      return scalar_ops();
    case Variant::avx2:
      if (const Ops* t = avx2_ops_or_null()) {
        return *t;
      }
      throw ConfigError("avx2 kernels not compiled into this binary");
  }
  throw ConfigError("unknown kernel variant");
}

bool supported(Variant v) {
  switch (v) {
    case Variant::scalar:
      return true;
    case Variant::avx2:
      return avx2_ops_or_null() != nullptr && cpu_has_avx2();
  }
  return false;
}

std::vector<Variant> compiled_variants() {
  std::vector<Variant> out{Variant::scalar};
  if (avx2_ops_or_null() != nullptr) {
    out.push_back(Variant::avx2);
  }
  return out;
}

const char* variant_name(Variant v) {
  return v == Variant::scalar ? "scalar" : "avx2";
}

const Ops& active() {
  const Ops* t = g_active.load(std::memory_order_acquire);
  if (t == nullptr) {
    t = init_from_env();
    g_active.store(t, std::memory_order_release);
  }
  return *t;
}

void select(Variant v) {
  if (!supported(v)) {
    throw ConfigError(std::string("kernel variant not supported on this host: ") + variant_name(v));
  }
  g_active.store(&ops(v), std::memory_order_release);
}

void select_auto() { g_active.store(pick_auto(), std::memory_order_release); }

bool select_by_name(std::string_view name) {
  if (name == "auto") {
    select_auto();
    return true;
  }
  if (name == "scalar") {
    select(Variant::scalar);
    return true;
  }
  if (name == "avx2") {
    select(Variant::avx2);
    return true;
  }
  return false;
}

}  // namespace fairgen::kernels
