/*
 * Copyright 2026 The upage Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "upage/kernel_source.hpp"

#if defined(__linux__) && __has_include(<linux/userfaultfd.h>)
#define UPAGE_HAVE_USERFAULTFD 1
#else
#define UPAGE_HAVE_USERFAULTFD 0
#endif

#if UPAGE_HAVE_USERFAULTFD

#include <fcntl.h>
#include <linux/userfaultfd.h>
#include <poll.h>
#include <sys/eventfd.h>
#include <sys/ioctl.h>
#include <sys/mman.h>
#include <sys/syscall.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <thread>
#include <vector>

namespace upage {

namespace {

int userfaultfd_syscall(int flags) {
  return static_cast<int>(::syscall(__NR_userfaultfd, flags));
}

}  // namespace

struct KernelFaultSource::Impl {
  MonitorEngine& engine;
  std::uint64_t size = 0;
  std::uint64_t region_id = 0;
  std::uint8_t* base = nullptr;
  int uffd = -1;
  int stop_fd = -1;
  std::vector<bool> present;
  std::atomic<std::uint64_t> faults{0};
  std::uint64_t next_seq = 1;
  std::thread dispatcher;

  explicit Impl(MonitorEngine& eng) : engine(eng) {}

  ~Impl() {
    if (dispatcher.joinable()) {
      std::uint64_t one = 1;
      [[maybe_unused]] ssize_t n = ::write(stop_fd, &one, sizeof(one));
      dispatcher.join();
    }
    if (region_id != 0) {
      try {
        engine.deregister_region(region_id);
      } catch (...) {
      }
    }
    if (base != MAP_FAILED && base != nullptr) ::munmap(base, size);
    if (uffd >= 0) ::close(uffd);
    if (stop_fd >= 0) ::close(stop_fd);
  }

  void install_zero(std::uint64_t addr) {
    uffdio_zeropage zp{};
    zp.range.start = reinterpret_cast<std::uint64_t>(base) + addr;
    zp.range.len = kPageSize;
    if (::ioctl(uffd, UFFDIO_ZEROPAGE, &zp) == -1) {
      if (errno == EEXIST) {
        wake(addr);
        return;
      }
      throw TransportError(std::string("UFFDIO_ZEROPAGE: ") + std::strerror(errno));
    }
  }

  void install_copy(std::uint64_t addr, const PageBuffer& bytes) {
    uffdio_copy cp{};
    cp.dst = reinterpret_cast<std::uint64_t>(base) + addr;
    cp.src = reinterpret_cast<std::uint64_t>(bytes.data());
    cp.len = kPageSize;
    if (::ioctl(uffd, UFFDIO_COPY, &cp) == -1) {
      if (errno == EEXIST) {
        wake(addr);
        return;
      }
      throw TransportError(std::string("UFFDIO_COPY: ") + std::strerror(errno));
    }
  }

  void wake(std::uint64_t addr) {
    uffdio_range range{};
    range.start = reinterpret_cast<std::uint64_t>(base) + addr;
    range.len = kPageSize;
    ::ioctl(uffd, UFFDIO_WAKE, &range);
  }

  void dispatch_loop() {
    pollfd fds[2] = {{uffd, POLLIN, 0}, {stop_fd, POLLIN, 0}};
    for (;;) {
      if (::poll(fds, 2, -1) < 0) {
        if (errno == EINTR) continue;
        return;
      }
      if (fds[1].revents & POLLIN) return;
      if (!(fds[0].revents & POLLIN)) continue;

      uffd_msg msg;
      ssize_t n = ::read(uffd, &msg, sizeof(msg));
      if (n != sizeof(msg)) {
        if (n < 0 && (errno == EAGAIN || errno == EINTR)) continue;
        return;
      }
      if (msg.event != UFFD_EVENT_PAGEFAULT) continue;

      std::uint64_t fault_va = msg.arg.pagefault.address;
      std::uint64_t addr = (fault_va - reinterpret_cast<std::uint64_t>(base)) & kPageMask;
      std::uint64_t page = addr / kPageSize;

      // Several threads can fault on one page; the first event resolves it
      // and the rest just need a wake.
      if (present[page]) {
        wake(addr);
        continue;
      }

      bool is_write = (msg.arg.pagefault.flags & UFFD_PAGEFAULT_FLAG_WRITE) != 0;
      FaultEvent event{PageKey{region_id, addr},
                       is_write ? FaultKind::Write : FaultKind::Read, next_seq++};
      Resolution res = engine.handle_fault(event);
      if (res.is_copy()) {
        install_copy(addr, res.bytes());
      } else {
        install_zero(addr);
      }
      present[page] = true;
      faults.fetch_add(1, std::memory_order_relaxed);
    }
  }
};

bool KernelFaultSource::available(std::string* reason) {
  int fd = userfaultfd_syscall(O_CLOEXEC | O_NONBLOCK);
  if (fd < 0) {
    if (reason) {
      *reason = std::string("userfaultfd syscall unavailable: ") + std::strerror(errno);
    }
    return false;
  }
  uffdio_api api{};
  api.api = UFFD_API;
  bool ok = ::ioctl(fd, UFFDIO_API, &api) == 0;
  if (!ok && reason) {
    *reason = std::string("UFFDIO_API handshake failed: ") + std::strerror(errno);
  }
  ::close(fd);
  return ok;
}

KernelFaultSource::KernelFaultSource(MonitorEngine& engine, std::uint64_t size_bytes)
    : impl_(std::make_unique<Impl>(engine)) {
  if (size_bytes == 0 || size_bytes % kPageSize != 0) {
    throw ContractViolation("kernel source: size must be a positive page multiple");
  }
  std::string reason;
  if (!available(&reason)) {
    throw ContractViolation("kernel source unavailable: " + reason);
  }

  impl_->size = size_bytes;
  impl_->uffd = userfaultfd_syscall(O_CLOEXEC);
  if (impl_->uffd < 0) {
    throw ContractViolation(std::string("userfaultfd: ") + std::strerror(errno));
  }
  uffdio_api api{};
  api.api = UFFD_API;
  if (::ioctl(impl_->uffd, UFFDIO_API, &api) == -1) {
    throw ContractViolation(std::string("UFFDIO_API: ") + std::strerror(errno));
  }

  void* mem = ::mmap(nullptr, size_bytes, PROT_READ | PROT_WRITE,
                     MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
  if (mem == MAP_FAILED) {
    throw ContractViolation(std::string("mmap: ") + std::strerror(errno));
  }
  impl_->base = static_cast<std::uint8_t*>(mem);

  uffdio_register reg{};
  reg.range.start = reinterpret_cast<std::uint64_t>(mem);
  reg.range.len = size_bytes;
  reg.mode = UFFDIO_REGISTER_MODE_MISSING;
  if (::ioctl(impl_->uffd, UFFDIO_REGISTER, &reg) == -1) {
    throw ContractViolation(std::string("UFFDIO_REGISTER: ") + std::strerror(errno));
  }

  impl_->stop_fd = ::eventfd(0, EFD_CLOEXEC);
  if (impl_->stop_fd < 0) {
    throw ContractViolation(std::string("eventfd: ") + std::strerror(errno));
  }

  impl_->present.assign(size_bytes / kPageSize, false);

  Impl* impl = impl_.get();
  impl_->region_id = engine.register_region(
      size_bytes, [impl](const PageKey& key, PageBuffer& out) {
        // MOVE analog: pull the bytes out of the live mapping, then punch a
        // hole so the next touch faults back through us.
        std::memcpy(out.data(), impl->base + key.page_addr, kPageSize);
        ::madvise(impl->base + key.page_addr, kPageSize, MADV_DONTNEED);
        impl->present[key.page_addr / kPageSize] = false;
      });

  impl_->dispatcher = std::thread([impl] { impl->dispatch_loop(); });
}

KernelFaultSource::~KernelFaultSource() = default;

std::uint8_t* KernelFaultSource::base() const { return impl_->base; }
std::uint64_t KernelFaultSource::size() const { return impl_->size; }
std::uint64_t KernelFaultSource::region_id() const { return impl_->region_id; }
std::uint64_t KernelFaultSource::fault_count() const { return impl_->faults.load(); }

}  // namespace upage

#else  // !UPAGE_HAVE_USERFAULTFD

namespace upage {

struct KernelFaultSource::Impl {};

bool KernelFaultSource::available(std::string* reason) {
  if (reason) *reason = "built without userfaultfd support on this platform";
  return false;
}

KernelFaultSource::KernelFaultSource(MonitorEngine&, std::uint64_t) {
  std::string reason;
  available(&reason);
  throw ContractViolation("kernel source unavailable: " + reason);
}

KernelFaultSource::~KernelFaultSource() = default;

std::uint8_t* KernelFaultSource::base() const { return nullptr; }
std::uint64_t KernelFaultSource::size() const { return 0; }
std::uint64_t KernelFaultSource::region_id() const { return 0; }
std::uint64_t KernelFaultSource::fault_count() const { return 0; }

}  // namespace upage

#endif
